#pragma once

#include <cstdlib>
#include <ctime>
#include <set>
#include <sstream>

#include "lesp/trainer.hpp"

namespace lesp {

// thrown for bad invocations (unknown flag, missing value); run_cli prints
// usage and exits 2 for these, 1 for everything else
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace cli_detail {

inline const char* usage_text() {
  return
      "usage: lesp <train|eval|export> [flags]\n"
      "\n"
      "  train   run the full pipeline and write artifacts to a run dir\n"
      "    --env NAME            u_maze | w_maze | four_rooms\n"
      "    --out DIR             run directory (or set LESP_OUT_DIR)\n"
      "    --seed N | --seeds a,b,c\n"
      "    --steps N             total environment steps\n"
      "    --c N  --p X  --alpha X  --r-g X  --n-cov N  --tau X\n"
      "    --k-frac X  --repr-interval N\n"
      "    --eval-every N  --eval-episodes N  --update-every N\n"
      "    --warmup N  --stop-at X  --pretrain-episodes N\n"
      "    --config FILE         key=value file applied before flags\n"
      "    --ablation NAME       no-prospect | no-stable-value\n"
      "\n"
      "  eval    re-evaluate a run's checkpoints\n"
      "    --out RUNDIR  [--episodes N]   (default 50 episodes)\n"
      "\n"
      "  export  aggregate several runs into mean and confidence band\n"
      "    --out FILE RUNDIR [RUNDIR...]\n"
      "\n"
      "LESP_OUT_DIR is used when --out is omitted.\n";
}

// value-taking flags, keyed without the leading dashes
inline const std::set<std::string>& known_flags() {
  static const std::set<std::string> f = {
      "env", "out", "seed", "seeds", "steps", "c", "p", "alpha", "r-g",
      "n-cov", "tau", "k-frac", "repr-interval", "eval-every",
      "eval-episodes", "update-every", "warmup", "stop-at",
      "pretrain-episodes", "config", "ablation", "episodes"};
  return f;
}

struct ParsedArgs {
  std::map<std::string, std::string> flags;
  std::vector<std::string> positional;
};

inline ParsedArgs parse_args(const std::vector<std::string>& args,
                             std::size_t start) {
  ParsedArgs p;
  for (std::size_t i = start; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) == 0) {
      const std::string name = a.substr(2);
      if (!known_flags().count(name))
        throw UsageError("unknown flag " + a);
      if (i + 1 >= args.size())
        throw UsageError("flag " + a + " needs a value");
      p.flags[name] = args[++i];
    } else {
      p.positional.push_back(a);
    }
  }
  return p;
}

// config keys a flag maps onto; seeds/out/config/ablation/episodes are
// handled separately
inline std::map<std::string, std::string> config_overrides(
    const std::map<std::string, std::string>& flags) {
  static const std::map<std::string, std::string> names = {
      {"env", "env"},
      {"seed", "seed"},
      {"steps", "total_env_steps"},
      {"c", "c"},
      {"p", "p"},
      {"alpha", "alpha"},
      {"r-g", "r_g"},
      {"n-cov", "n_cov"},
      {"tau", "tau"},
      {"k-frac", "k_fraction"},
      {"repr-interval", "repr_interval"},
      {"eval-every", "eval_every"},
      {"eval-episodes", "eval_episodes"},
      {"update-every", "update_every"},
      {"warmup", "warmup_steps"},
      {"stop-at", "stop_at_success"},
      {"pretrain-episodes", "pretrain_episodes"}};
  std::map<std::string, std::string> kv;
  for (const auto& [flag, key] : names) {
    const auto it = flags.find(flag);
    if (it != flags.end()) kv[key] = it->second;
  }
  return kv;
}

inline std::string resolve_out(const std::map<std::string, std::string>& flags) {
  const auto it = flags.find("out");
  if (it != flags.end()) return it->second;
  if (const char* e = std::getenv("LESP_OUT_DIR"); e && *e) return e;
  throw UsageError("no output location: pass --out or set LESP_OUT_DIR");
}

inline std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

// key=value files may be manifests; run_* keys describe the run, not the
// configuration, and are skipped here
inline std::map<std::string, std::string> load_config_file(
    const std::string& path) {
  std::map<std::string, std::string> kv = parse_kv_file(path);
  for (auto it = kv.begin(); it != kv.end();) {
    if (it->first.rfind("run_", 0) == 0)
      it = kv.erase(it);
    else
      ++it;
  }
  return kv;
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) throw UsageError("bad seed list: " + s);
    out.push_back(std::stoull(tok));
  }
  if (out.empty()) throw UsageError("bad seed list: " + s);
  return out;
}

}  // namespace cli_detail

inline int cli_train(const cli_detail::ParsedArgs& a, std::ostream& out) {
  using namespace cli_detail;
  if (!a.positional.empty())
    throw UsageError("train takes no positional arguments");

  std::map<std::string, std::string> file_kv;
  if (const auto it = a.flags.find("config"); it != a.flags.end())
    file_kv = load_config_file(it->second);

  // precedence: per-env defaults, then config file, then flags
  std::string env = "u_maze";
  if (const auto it = file_kv.find("env"); it != file_kv.end())
    env = it->second;
  if (const auto it = a.flags.find("env"); it != a.flags.end())
    env = it->second;
  LespConfig cfg = default_config(env);
  apply_config_kv(cfg, file_kv);
  apply_config_kv(cfg, config_overrides(a.flags));

  std::string ablation = "none";
  if (const auto it = a.flags.find("ablation"); it != a.flags.end()) {
    ablation = it->second;
    if (ablation == "no-prospect")
      cfg.alpha = 0.0;
    else if (ablation == "no-stable-value")
      cfg.k_fraction = 0.0;
    else
      throw UsageError("unknown ablation '" + ablation +
                       "' (available: no-prospect, no-stable-value)");
  }

  std::vector<std::uint64_t> seeds;
  if (const auto it = a.flags.find("seeds"); it != a.flags.end())
    seeds = parse_seed_list(it->second);
  else
    seeds = {cfg.seed};

  const std::string out_dir = resolve_out(a.flags);
  cfg.seed = seeds.front();
  cfg.out_dir = out_dir;
  cfg.validate();

  // manifest goes down before any training starts
  std::filesystem::create_directories(out_dir);
  const std::string manifest_path = out_dir + "/manifest.txt";
  {
    std::ofstream mf(manifest_path);
    if (!mf) throw TrainingError("cannot write " + manifest_path);
    std::vector<std::pair<std::string, std::string>> head;
    head.emplace_back("run_command", "train");
    std::string seed_list;
    for (std::size_t i = 0; i < seeds.size(); ++i)
      seed_list += (i ? "," : "") + std::to_string(seeds[i]);
    head.emplace_back("run_seeds", seed_list);
    head.emplace_back("run_ablation", ablation);
    head.emplace_back("run_started", utc_now());
    write_kv(mf, head);
    write_kv(mf, config_to_kv(cfg));
  }

  for (const std::uint64_t s : seeds) {
    LespConfig run_cfg = cfg;
    run_cfg.seed = s;
    run_cfg.out_dir = seeds.size() == 1
                          ? out_dir
                          : out_dir + "/seed_" + std::to_string(s);
    const RunMetrics m = run_lesp(run_cfg);
    out << "seed=" << s << " env_steps=" << m.env_steps
        << " episodes=" << m.episodes
        << " final_success=" << fmt_metric(m.final_success)
        << " explore_events=" << m.explore_events
        << " wall_seconds=" << fmt_metric(m.wall_seconds) << "\n";
  }

  {
    std::ofstream mf(manifest_path, std::ios::app);
    mf << "run_finished=" << utc_now() << "\n";
  }
  return 0;
}

inline int cli_eval(const cli_detail::ParsedArgs& a, std::ostream& out) {
  using namespace cli_detail;
  if (!a.positional.empty())
    throw UsageError("eval takes no positional arguments");
  const std::string dir = resolve_out(a.flags);
  int episodes = 50;
  if (const auto it = a.flags.find("episodes"); it != a.flags.end())
    episodes = std::stoi(it->second);
  if (episodes < 1) throw UsageError("--episodes must be >= 1");

  LespConfig cfg;
  apply_config_kv(cfg, parse_kv_file(dir + "/config.txt"));
  const SacAgent low = load_agent(dir + "/ckpt/low");
  const SacAgent high = load_agent(dir + "/ckpt/high");
  const double rate =
      evaluate(low, high, builtin_maze(cfg.env), episodes, cfg.c);
  out << "env=" << cfg.env << " episodes=" << episodes
      << " success_rate=" << fmt_metric(rate) << "\n";
  return 0;
}

inline int cli_export(const cli_detail::ParsedArgs& a, std::ostream& out) {
  using namespace cli_detail;
  const auto out_it = a.flags.find("out");
  if (out_it == a.flags.end())
    throw UsageError("export needs --out FILE");
  if (a.positional.empty())
    throw UsageError("export needs at least one run directory");

  // configs must agree on everything except seed and output location
  std::map<std::string, std::string> ref;
  for (std::size_t r = 0; r < a.positional.size(); ++r) {
    std::map<std::string, std::string> kv =
        parse_kv_file(a.positional[r] + "/config.txt");
    kv.erase("seed");
    kv.erase("out_dir");
    if (r == 0) {
      ref = std::move(kv);
      continue;
    }
    for (const auto& [k, v] : ref) {
      const auto it = kv.find(k);
      if (it == kv.end() || it->second != v)
        throw std::runtime_error("export: config mismatch on '" + k +
                                 "' between " + a.positional[0] + " and " +
                                 a.positional[r]);
    }
    if (kv.size() != ref.size())
      throw std::runtime_error("export: config key sets differ between " +
                               a.positional[0] + " and " + a.positional[r]);
  }

  // per-run success curves keyed by env step
  std::vector<std::map<long long, double>> curves;
  for (const std::string& dir : a.positional) {
    std::ifstream is(dir + "/metrics.csv");
    if (!is) throw std::runtime_error("export: cannot read " + dir +
                                      "/metrics.csv");
    std::string line;
    std::getline(is, line);
    if (line.rfind("env_step,episode,eval_success_rate", 0) != 0)
      throw std::runtime_error("export: unexpected metrics header in " + dir);
    std::map<long long, double> curve;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      long long step = 0;
      long long episode = 0;
      double rate = 0.0;
      if (std::sscanf(line.c_str(), "%lld,%lld,%lf", &step, &episode, &rate) !=
          3)
        throw std::runtime_error("export: bad metrics row in " + dir + ": " +
                                 line);
      curve[step] = rate;
    }
    if (curve.empty())
      throw std::runtime_error("export: no eval rows in " + dir);
    curves.push_back(std::move(curve));
  }

  // aggregate over the steps every run evaluated at
  std::vector<long long> steps;
  for (const auto& [step, _] : curves.front()) {
    bool everywhere = true;
    for (std::size_t r = 1; r < curves.size(); ++r)
      if (!curves[r].count(step)) everywhere = false;
    if (everywhere) steps.push_back(step);
  }
  if (steps.empty())
    throw std::runtime_error("export: runs share no evaluation steps");

  const double n = static_cast<double>(curves.size());
  std::ofstream os(out_it->second);
  if (!os) throw std::runtime_error("export: cannot write " + out_it->second);
  os << "env_step,mean_success,half_width_95,n\n";
  double last_mean = 0.0, last_half = 0.0;
  for (const long long step : steps) {
    double mean = 0.0;
    for (const auto& c : curves) mean += c.at(step);
    mean /= n;
    double var = 0.0;
    for (const auto& c : curves) {
      const double d = c.at(step) - mean;
      var += d * d;
    }
    // normal-approximation band; half width is zero for a single run
    const double sd = curves.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
    const double half = 1.96 * sd / std::sqrt(n);
    os << step << "," << fmt_metric(mean) << "," << fmt_metric(half) << ","
       << curves.size() << "\n";
    last_mean = mean;
    last_half = half;
  }
  out << "runs=" << curves.size() << " final_step=" << steps.back()
      << " mean=" << fmt_metric(last_mean)
      << " half_width=" << fmt_metric(last_half) << "\n";
  return 0;
}

inline int run_cli(const std::vector<std::string>& args, std::ostream& out,
                   std::ostream& err) {
  using namespace cli_detail;
  try {
    if (args.empty()) throw UsageError("missing subcommand");
    const std::string& cmd = args[0];
    const ParsedArgs parsed = parse_args(args, 1);
    if (cmd == "train") return cli_train(parsed, out);
    if (cmd == "eval") return cli_eval(parsed, out);
    if (cmd == "export") return cli_export(parsed, out);
    throw UsageError("unknown subcommand '" + cmd + "'");
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << usage_text();
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace lesp
