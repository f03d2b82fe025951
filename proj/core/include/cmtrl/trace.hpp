#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace cmtrl {

/// Run-level metadata, written as '#'-prefixed key=value lines ahead of the
/// CSV column header. Everything a scorer needs to re-derive thresholds
/// (dual box, consensus envelope) travels with the trace.
struct TraceHeader {
  std::string algorithm;  // pdnpg | pdnac | lfa
  std::string mode;       // central | decentral
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  int n_agents = 0;
  int n_tasks = 0;
  int n_states = 0;
  int n_actions = 0;
  double gamma = 0.0;
  double r_max = 0.0;
  double xi = 1.0;
  double b_lambda = 0.0;
  double sigma2 = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double eta = 0.0;
  double eps = 0.0;
  int iterations = 0;   // K
  int inner_steps = 0;  // T, lfa only
  int eval_every = 1;
  /// Sup-norm bound B on the critic tables driving the actor.
  double critic_bound = 0.0;
  /// (B_lambda + 1/N) * sqrt(N S A) * B * alpha / (1 - sigma2).
  double consensus_envelope = 0.0;
  bool premise_ok = true;
  std::vector<std::uint64_t> stream_ids;
};

struct TraceRow {
  int k = 0;
  int agent = 0;
  std::vector<double> task_values;  // V_i(rho) of this agent's policy, all tasks
  double v0 = 0.0;
  double violation = 0.0;
  double consensus_err = 0.0;
  double critic_err = 0.0;
  double lambda = 0.0;
  double nu = 0.0;
};

struct TraceFooter {
  std::string status = "ok";  // ok | error
  std::string error;
  bool duals_in_bounds = true;
  bool consensus_within_envelope = true;
  double max_consensus_error = 0.0;
  double max_dual = 0.0;
  long long samples = 0;         // transitions drawn over the whole run
  long long approx_warnings = 0; // lfa: iterations where ||Phi w* - Q|| > eps_max
};

struct MetricsTrace {
  TraceHeader header;
  std::vector<TraceRow> rows;
  TraceFooter footer;
};

/// Streams a trace as CSV. Floats carry 17 significant digits so identical
/// runs produce byte-identical files.
class TraceWriter {
 public:
  explicit TraceWriter(std::ostream& os) : os_(os) {}

  void write_header(const TraceHeader& header);
  void write_row(const TraceRow& row);
  void write_footer(const TraceFooter& footer);

 private:
  std::ostream& os_;
  int n_tasks_ = 0;
};

/// Parses a file produced by TraceWriter. Throws std::invalid_argument on a
/// malformed trace.
MetricsTrace read_trace_csv(std::istream& is);

std::uint64_t fnv1a64(std::string_view bytes);

/// printf "%.17g" formatting used everywhere a float enters a file.
std::string format_g17(double value);

}  // namespace cmtrl
