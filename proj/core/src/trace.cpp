#include "cmtrl/trace.hpp"

#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace cmtrl {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

std::string format_g17(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

void TraceWriter::write_header(const TraceHeader& h) {
  n_tasks_ = h.n_tasks;
  os_ << "# algorithm=" << h.algorithm << " mode=" << h.mode
      << " config_hash=" << hex64(h.config_hash) << " seed=" << h.seed << "\n";
  os_ << "# n_agents=" << h.n_agents << " n_tasks=" << h.n_tasks
      << " n_states=" << h.n_states << " n_actions=" << h.n_actions << "\n";
  os_ << "# gamma=" << format_g17(h.gamma) << " r_max=" << format_g17(h.r_max)
      << " xi=" << format_g17(h.xi) << " b_lambda=" << format_g17(h.b_lambda)
      << " sigma2=" << format_g17(h.sigma2) << "\n";
  os_ << "# alpha=" << format_g17(h.alpha) << " beta=" << format_g17(h.beta)
      << " eta=" << format_g17(h.eta) << " eps=" << format_g17(h.eps)
      << " K=" << h.iterations << " T=" << h.inner_steps
      << " eval_every=" << h.eval_every << "\n";
  os_ << "# critic_bound=" << format_g17(h.critic_bound)
      << " consensus_envelope=" << format_g17(h.consensus_envelope)
      << " premise_ok=" << (h.premise_ok ? 1 : 0) << "\n";
  os_ << "# streams=";
  for (std::size_t i = 0; i < h.stream_ids.size(); ++i) {
    os_ << (i ? ";" : "") << h.stream_ids[i];
  }
  os_ << "\n";
  os_ << "k,agent";
  for (int i = 1; i <= h.n_tasks; ++i) os_ << ",v" << i;
  os_ << ",v0,violation,consensus_err,critic_err,lambda,nu\n";
}

void TraceWriter::write_row(const TraceRow& r) {
  os_ << r.k << "," << r.agent;
  for (double v : r.task_values) os_ << "," << format_g17(v);
  os_ << "," << format_g17(r.v0) << "," << format_g17(r.violation) << ","
      << format_g17(r.consensus_err) << "," << format_g17(r.critic_err) << ","
      << format_g17(r.lambda) << "," << format_g17(r.nu) << "\n";
}

void TraceWriter::write_footer(const TraceFooter& f) {
  os_ << "# footer status=" << f.status
      << " duals_in_bounds=" << (f.duals_in_bounds ? 1 : 0)
      << " consensus_within_envelope=" << (f.consensus_within_envelope ? 1 : 0)
      << " max_consensus_error=" << format_g17(f.max_consensus_error)
      << " max_dual=" << format_g17(f.max_dual) << " samples=" << f.samples
      << " approx_warnings=" << f.approx_warnings << "\n";
  if (f.status != "ok") {
    os_ << "# error " << f.error << "\n";
  }
  os_.flush();
}

namespace {

std::map<std::string, std::string> parse_kv(const std::string& line) {
  std::map<std::string, std::string> kv;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq != std::string::npos) kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return kv;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  return out;
}

}  // namespace

MetricsTrace read_trace_csv(std::istream& is) {
  MetricsTrace t;
  std::string line;
  bool have_columns = false;
  int n_tasks = 0;

  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("# footer", 0) == 0) {
        const auto kv = parse_kv(line.substr(8));
        auto get = [&](const char* k) -> std::string {
          auto it = kv.find(k);
          return it == kv.end() ? std::string() : it->second;
        };
        if (!get("status").empty()) t.footer.status = get("status");
        t.footer.duals_in_bounds = get("duals_in_bounds") != "0";
        t.footer.consensus_within_envelope = get("consensus_within_envelope") != "0";
        if (!get("max_consensus_error").empty())
          t.footer.max_consensus_error = std::stod(get("max_consensus_error"));
        if (!get("max_dual").empty()) t.footer.max_dual = std::stod(get("max_dual"));
        if (!get("samples").empty()) t.footer.samples = std::stoll(get("samples"));
        if (!get("approx_warnings").empty())
          t.footer.approx_warnings = std::stoll(get("approx_warnings"));
      } else if (line.rfind("# error", 0) == 0) {
        t.footer.error = line.size() > 8 ? line.substr(8) : "";
      } else if (line.rfind("# streams=", 0) == 0) {
        std::istringstream ss(line.substr(10));
        std::string id;
        while (std::getline(ss, id, ';')) {
          if (!id.empty()) t.header.stream_ids.push_back(std::stoull(id));
        }
      } else {
        const auto kv = parse_kv(line.substr(1));
        auto num = [&](const char* k, double& dst) {
          auto it = kv.find(k);
          if (it != kv.end()) dst = std::stod(it->second);
        };
        auto inum = [&](const char* k, int& dst) {
          auto it = kv.find(k);
          if (it != kv.end()) dst = std::stoi(it->second);
        };
        if (kv.count("algorithm")) t.header.algorithm = kv.at("algorithm");
        if (kv.count("mode")) t.header.mode = kv.at("mode");
        if (kv.count("config_hash"))
          t.header.config_hash = std::stoull(kv.at("config_hash"), nullptr, 16);
        if (kv.count("seed")) t.header.seed = std::stoull(kv.at("seed"));
        inum("n_agents", t.header.n_agents);
        inum("n_tasks", t.header.n_tasks);
        inum("n_states", t.header.n_states);
        inum("n_actions", t.header.n_actions);
        num("gamma", t.header.gamma);
        num("r_max", t.header.r_max);
        num("xi", t.header.xi);
        num("b_lambda", t.header.b_lambda);
        num("sigma2", t.header.sigma2);
        num("alpha", t.header.alpha);
        num("beta", t.header.beta);
        num("eta", t.header.eta);
        num("eps", t.header.eps);
        inum("K", t.header.iterations);
        inum("T", t.header.inner_steps);
        inum("eval_every", t.header.eval_every);
        num("critic_bound", t.header.critic_bound);
        num("consensus_envelope", t.header.consensus_envelope);
        if (kv.count("premise_ok")) t.header.premise_ok = kv.at("premise_ok") != "0";
      }
      continue;
    }
    if (!have_columns) {
      const auto cols = split_csv(line);
      if (cols.size() < 8 || cols[0] != "k" || cols[1] != "agent") {
        throw std::invalid_argument("malformed trace: unexpected column header");
      }
      n_tasks = static_cast<int>(cols.size()) - 8;
      if (n_tasks < 1) throw std::invalid_argument("malformed trace: no task columns");
      have_columns = true;
      continue;
    }
    const auto fields = split_csv(line);
    if (static_cast<int>(fields.size()) != n_tasks + 8) {
      throw std::invalid_argument("malformed trace row: " + line);
    }
    TraceRow r;
    r.k = std::stoi(fields[0]);
    r.agent = std::stoi(fields[1]);
    for (int i = 0; i < n_tasks; ++i) r.task_values.push_back(std::stod(fields[2 + i]));
    r.v0 = std::stod(fields[n_tasks + 2]);
    r.violation = std::stod(fields[n_tasks + 3]);
    r.consensus_err = std::stod(fields[n_tasks + 4]);
    r.critic_err = std::stod(fields[n_tasks + 5]);
    r.lambda = std::stod(fields[n_tasks + 6]);
    r.nu = std::stod(fields[n_tasks + 7]);
    t.rows.push_back(std::move(r));
  }
  if (!have_columns) throw std::invalid_argument("malformed trace: missing column header");
  if (t.header.n_tasks == 0) t.header.n_tasks = n_tasks;
  return t;
}

}  // namespace cmtrl
