#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>

#include "lesp/exploration.hpp"
#include "lesp/io.hpp"
#include "lesp/maze.hpp"
#include "lesp/planner.hpp"
#include "lesp/reach.hpp"
#include "lesp/replay.hpp"
#include "lesp/repr.hpp"
#include "lesp/sac.hpp"

namespace lesp {

// Full run configuration. Defaults are the u_maze settings; default_config
// applies the per-environment overrides.
struct LespConfig {
  std::string env = "u_maze";
  std::string out_dir;  // empty: train in memory, write no artifacts
  std::uint64_t seed = 1;

  int c = 20;                 // low-level horizon (steps per subgoal)
  double p = 0.25;            // exploration-branch probability
  double alpha = 0.1;         // prospect weight; 0 disables planning
  double r_g = 20.0;          // candidate radius in latent space
  int n_cov = 20;             // landmark count
  double tau = 30.0;          // graph edge threshold
  double gamma = 0.99;
  double k_fraction = 0.5;    // stability-penalty mask fraction; 0 disables
  int repr_interval = 100;    // episodes between phi retrains
  int batch_size = 128;
  long long total_env_steps = 300000;
  long long eval_every = 5000;
  int eval_episodes = 50;

  int pretrain_episodes = 200;
  int repr_pretrain_steps = 2000;
  int reach_train_steps = 20000;
  int repr_retrain_steps = 1000;

  std::size_t low_capacity = 200000;
  std::size_t high_capacity = 20000;
  std::size_t pre_capacity = 50000;
  long long warmup_steps = 5000;
  int update_every = 1;  // env steps per low-level update
  int h_max = 50;
  double cell_size = 2.0;
  int max_candidates = 200;
  int fps_pool = 2000;
  int scan_budget = 5000;
  double stop_at_success = -1.0;  // >0: stop once an eval reaches this rate

  double lr = 3e-4;
  double repr_lr = 1e-4;
  std::vector<int> policy_hidden = {256, 256};
  std::vector<int> reach_hidden = {256, 256};
  int repr_hidden = 100;

  void validate() const {
    auto fail = [](const std::string& what) {
      throw std::invalid_argument("config: " + what);
    };
    if (c < 1) fail("c must be >= 1");
    if (p < 0.0 || p > 1.0) fail("p must lie in [0, 1]");
    if (alpha < 0.0) fail("alpha must be >= 0");
    if (r_g <= 0.0) fail("r_g must be > 0");
    if (n_cov < 1) fail("n_cov must be >= 1");
    if (gamma < 0.0 || gamma >= 1.0) fail("gamma must lie in [0, 1)");
    if (k_fraction < 0.0 || k_fraction > 1.0) fail("k_fraction must lie in [0, 1]");
    if (repr_interval < 1) fail("repr_interval must be >= 1");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (total_env_steps < 0) fail("total_env_steps must be >= 0");
    if (eval_every < 1) fail("eval_every must be >= 1");
    if (eval_episodes < 1) fail("eval_episodes must be >= 1");
    if (pretrain_episodes < 1) fail("pretrain_episodes must be >= 1");
    if (repr_pretrain_steps < 0 || reach_train_steps < 0 ||
        repr_retrain_steps < 0)
      fail("training step counts must be >= 0");
    if (low_capacity == 0 || high_capacity == 0 || pre_capacity == 0)
      fail("buffer capacities must be positive");
    if (warmup_steps < 0) fail("warmup_steps must be >= 0");
    if (update_every < 1) fail("update_every must be >= 1");
    if (h_max < 1) fail("h_max must be >= 1");
    if (cell_size <= 0.0) fail("cell_size must be > 0");
    if (max_candidates < 1) fail("max_candidates must be >= 1");
    if (fps_pool < 1) fail("fps_pool must be >= 1");
    if (scan_budget < 1) fail("scan_budget must be >= 1");
    if (lr <= 0.0 || repr_lr <= 0.0) fail("learning rates must be > 0");
    if (policy_hidden.empty() || reach_hidden.empty())
      fail("hidden layer lists must be non-empty");
    if (repr_hidden < 1) fail("repr_hidden must be >= 1");
  }
};

// Per-environment defaults: larger mazes get more landmarks, a longer budget
// and a thinner update cadence (wall-clock containment on one core).
inline LespConfig default_config(const std::string& env_name) {
  builtin_maze(env_name);  // throws with the valid list on a bad name
  LespConfig cfg;
  cfg.env = env_name;
  if (env_name == "w_maze") {
    cfg.n_cov = 40;
    cfg.total_env_steps = 1000000;
    cfg.update_every = 4;
    cfg.eval_every = 10000;
  } else if (env_name == "four_rooms") {
    cfg.n_cov = 60;
    cfg.total_env_steps = 1000000;
    cfg.update_every = 4;
    cfg.eval_every = 10000;
  }
  return cfg;
}

inline std::vector<std::pair<std::string, std::string>> config_to_kv(
    const LespConfig& c) {
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("env", c.env);
  kv.emplace_back("out_dir", c.out_dir);
  kv.emplace_back("seed", std::to_string(c.seed));
  kv.emplace_back("c", std::to_string(c.c));
  kv.emplace_back("p", fmt_full(c.p));
  kv.emplace_back("alpha", fmt_full(c.alpha));
  kv.emplace_back("r_g", fmt_full(c.r_g));
  kv.emplace_back("n_cov", std::to_string(c.n_cov));
  kv.emplace_back("tau", fmt_full(c.tau));
  kv.emplace_back("gamma", fmt_full(c.gamma));
  kv.emplace_back("k_fraction", fmt_full(c.k_fraction));
  kv.emplace_back("repr_interval", std::to_string(c.repr_interval));
  kv.emplace_back("batch_size", std::to_string(c.batch_size));
  kv.emplace_back("total_env_steps", std::to_string(c.total_env_steps));
  kv.emplace_back("eval_every", std::to_string(c.eval_every));
  kv.emplace_back("eval_episodes", std::to_string(c.eval_episodes));
  kv.emplace_back("pretrain_episodes", std::to_string(c.pretrain_episodes));
  kv.emplace_back("repr_pretrain_steps", std::to_string(c.repr_pretrain_steps));
  kv.emplace_back("reach_train_steps", std::to_string(c.reach_train_steps));
  kv.emplace_back("repr_retrain_steps", std::to_string(c.repr_retrain_steps));
  kv.emplace_back("low_capacity", std::to_string(c.low_capacity));
  kv.emplace_back("high_capacity", std::to_string(c.high_capacity));
  kv.emplace_back("pre_capacity", std::to_string(c.pre_capacity));
  kv.emplace_back("warmup_steps", std::to_string(c.warmup_steps));
  kv.emplace_back("update_every", std::to_string(c.update_every));
  kv.emplace_back("h_max", std::to_string(c.h_max));
  kv.emplace_back("cell_size", fmt_full(c.cell_size));
  kv.emplace_back("max_candidates", std::to_string(c.max_candidates));
  kv.emplace_back("fps_pool", std::to_string(c.fps_pool));
  kv.emplace_back("scan_budget", std::to_string(c.scan_budget));
  kv.emplace_back("stop_at_success", fmt_full(c.stop_at_success));
  kv.emplace_back("lr", fmt_full(c.lr));
  kv.emplace_back("repr_lr", fmt_full(c.repr_lr));
  kv.emplace_back("policy_hidden", join_int_list(c.policy_hidden));
  kv.emplace_back("reach_hidden", join_int_list(c.reach_hidden));
  kv.emplace_back("repr_hidden", std::to_string(c.repr_hidden));
  return kv;
}

// Apply key=value overrides (config file or manifest). Unknown keys throw
// unless ignore_unknown is set; values follow the checkpoint conventions
// (plain ints, %.17g doubles, comma lists).
inline void apply_config_kv(LespConfig& c,
                            const std::map<std::string, std::string>& kv,
                            bool ignore_unknown = false) {
  for (const auto& [key, val] : kv) {
    bool matched = true;
    try {
      if (key == "env") c.env = val;
      else if (key == "out_dir") c.out_dir = val;
      else if (key == "seed") c.seed = std::stoull(val);
      else if (key == "c") c.c = std::stoi(val);
      else if (key == "p") c.p = std::stod(val);
      else if (key == "alpha") c.alpha = std::stod(val);
      else if (key == "r_g") c.r_g = std::stod(val);
      else if (key == "n_cov") c.n_cov = std::stoi(val);
      else if (key == "tau") c.tau = std::stod(val);
      else if (key == "gamma") c.gamma = std::stod(val);
      else if (key == "k_fraction") c.k_fraction = std::stod(val);
      else if (key == "repr_interval") c.repr_interval = std::stoi(val);
      else if (key == "batch_size") c.batch_size = std::stoi(val);
      else if (key == "total_env_steps") c.total_env_steps = std::stoll(val);
      else if (key == "eval_every") c.eval_every = std::stoll(val);
      else if (key == "eval_episodes") c.eval_episodes = std::stoi(val);
      else if (key == "pretrain_episodes") c.pretrain_episodes = std::stoi(val);
      else if (key == "repr_pretrain_steps") c.repr_pretrain_steps = std::stoi(val);
      else if (key == "reach_train_steps") c.reach_train_steps = std::stoi(val);
      else if (key == "repr_retrain_steps") c.repr_retrain_steps = std::stoi(val);
      else if (key == "low_capacity") c.low_capacity = std::stoull(val);
      else if (key == "high_capacity") c.high_capacity = std::stoull(val);
      else if (key == "pre_capacity") c.pre_capacity = std::stoull(val);
      else if (key == "warmup_steps") c.warmup_steps = std::stoll(val);
      else if (key == "update_every") c.update_every = std::stoi(val);
      else if (key == "h_max") c.h_max = std::stoi(val);
      else if (key == "cell_size") c.cell_size = std::stod(val);
      else if (key == "max_candidates") c.max_candidates = std::stoi(val);
      else if (key == "fps_pool") c.fps_pool = std::stoi(val);
      else if (key == "scan_budget") c.scan_budget = std::stoi(val);
      else if (key == "stop_at_success") c.stop_at_success = std::stod(val);
      else if (key == "lr") c.lr = std::stod(val);
      else if (key == "repr_lr") c.repr_lr = std::stod(val);
      else if (key == "policy_hidden") c.policy_hidden = parse_int_list(val);
      else if (key == "reach_hidden") c.reach_hidden = parse_int_list(val);
      else if (key == "repr_hidden") c.repr_hidden = std::stoi(val);
      else matched = false;
    } catch (const std::exception&) {
      throw std::invalid_argument("config: bad value for " + key + ": " + val);
    }
    if (!matched && !ignore_unknown)
      throw std::invalid_argument("config: unknown key " + key);
  }
}

struct EvalPoint {
  long long env_step = 0;
  int episode = 0;
  double success_rate = 0.0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double reg_loss = 0.0;
  double triplet_loss = 0.0;
  long long coverage_cells = 0;
};

struct RunMetrics {
  std::vector<EvalPoint> evals;
  long long env_steps = 0;
  int episodes = 0;
  long long decisions = 0;       // high-level decision points seen
  long long explore_draws = 0;   // decisions where the p-branch fired
  long long explore_events = 0;  // branch produced a logged selection
  int retrain_skips = 0;
  double final_success = 0.0;
  double wall_seconds = 0.0;
  int phi_version = 0;
};

// Low-level batch: obs/next_obs are [state; subgoal], reward is recomputed
// from the stored (next_state, subgoal) under the CURRENT phi so retrains
// apply retroactively. The stored intrinsic_reward field is deliberately
// ignored here.
inline SacBatch assemble_low_batch(const ReplayBuffer<Transition>& buf,
                                   const ReprNet& phi, int n, Rng& rng) {
  const std::vector<Transition> sample =
      buf.sample_batch(static_cast<std::size_t>(n), rng);
  SacBatch b;
  b.obs.resize(6, n);
  b.action.resize(2, n);
  b.reward.resize(n);
  b.next_obs.resize(6, n);
  b.done.resize(n);
  for (int i = 0; i < n; ++i) {
    const Transition& t = sample[static_cast<std::size_t>(i)];
    b.obs.col(i) << t.state.to_input(), t.subgoal;
    b.action.col(i) = t.action;
    b.next_obs.col(i) << t.next_state.to_input(), t.subgoal;
    b.reward[i] = -(phi.embed(t.next_state) - t.subgoal).norm();
    b.done[i] = t.done ? 1.0 : 0.0;
  }
  return b;
}

inline SacBatch assemble_high_batch(const ReplayBuffer<HighTransition>& buf,
                                    int n, Rng& rng) {
  const std::vector<HighTransition> sample =
      buf.sample_batch(static_cast<std::size_t>(n), rng);
  SacBatch b;
  b.obs.resize(4, n);
  b.action.resize(2, n);
  b.reward.resize(n);
  b.next_obs.resize(4, n);
  b.done.resize(n);
  for (int i = 0; i < n; ++i) {
    const HighTransition& t = sample[static_cast<std::size_t>(i)];
    b.obs.col(i) = t.state.to_input();
    b.action.col(i) = t.chosen_subgoal;
    b.reward[i] = t.ext_reward_sum;
    b.next_obs.col(i) = t.next_state.to_input();
    b.done[i] = t.done ? 1.0 : 0.0;
  }
  return b;
}

// Deterministic closed-loop evaluation: subgoal_fn picks g every c steps,
// action_fn drives between decisions, no learning, no exploration.
template <class SubgoalFn, class ActionFn>
double evaluate_policy(const MazeSpec& spec, int episodes, int c,
                       SubgoalFn&& subgoal_fn, ActionFn&& action_fn) {
  MazeEnv env(spec);
  int successes = 0;
  for (int ep = 0; ep < episodes; ++ep) {
    StateVec s = env.reset(0);
    LatentPoint g = LatentPoint::Zero();
    for (int t = 0;; ++t) {
      if (t % c == 0) g = subgoal_fn(s);
      const EnvStep out = env.step(action_fn(s, g));
      s = out.next_state;
      if (out.success) ++successes;
      if (out.done) break;
    }
  }
  return static_cast<double>(successes) / static_cast<double>(episodes);
}

// Evaluation rolls out the stochastic policy (the object the learner
// optimizes) under one fixed seed: rates are graded across the episode
// set, episode noise is paired across evaluations of different
// checkpoints, and repeated evaluation of the same nets is bit-identical.
// Evaluating the tanh mean instead reads as collapse whenever the critic
// flattens near success and entropy widens the actor, even while the
// policy solves the task on every draw.
inline double evaluate(const SacAgent& low, const SacAgent& high,
                       const MazeSpec& spec, int episodes, int c) {
  Rng eval_rng(9001);
  return evaluate_policy(
      spec, episodes, c,
      [&](const StateVec& s) {
        const auto r =
            high.act(Eigen::VectorXd(s.to_input()), false, eval_rng);
        return LatentPoint(r.action[0], r.action[1]);
      },
      [&](const StateVec& s, const LatentPoint& g) {
        Eigen::VectorXd obs(6);
        obs << s.to_input(), g;
        const auto r = low.act(obs, false, eval_rng);
        return Vec2(r.action[0], r.action[1]);
      });
}

class LespTrainer {
 public:
  explicit LespTrainer(LespConfig cfg)
      : cfg_(std::move(cfg)),
        env_(builtin_maze(cfg_.env)),
        b_pre_(cfg_.pre_capacity),
        low_buf_(cfg_.low_capacity),
        high_buf_(cfg_.high_capacity),
        walk_rng_(Rng::derive_seed(cfg_.seed, 0)),
        repr_rng_(Rng::derive_seed(cfg_.seed, 1)),
        reach_rng_(Rng::derive_seed(cfg_.seed, 2)),
        agent_rng_(Rng::derive_seed(cfg_.seed, 3)),
        train_rng_(Rng::derive_seed(cfg_.seed, 4)) {
    cfg_.validate();
    goal_state_.pos = env_.spec().goal;
    goal_state_.vel = Vec2::Zero();
    grid_.cell_size = cfg_.cell_size;
  }

  // Random-walk collection, initial phi fit, reachability training, agent
  // init. Idempotent; run() calls it when needed.
  void pretrain() {
    if (pretrained_) return;
    collect_random_walk(env_, cfg_.pretrain_episodes, b_pre_, walk_rng_);
    phi_ = ReprNet::make(repr_rng_, cfg_.repr_hidden);
    const RetrainOutcome fit =
        retrain(phi_, b_pre_, cfg_.repr_pretrain_steps, cfg_.c, repr_rng_,
                cfg_.batch_size, cfg_.repr_lr);
    if (fit.skipped)
      ++metrics_.retrain_skips;
    else
      last_triplet_ = fit.last_loss;
    reach_ = train_reach(b_pre_, phi_, cfg_.reach_train_steps, reach_rng_,
                         cfg_.h_max, &reach_curve_, cfg_.batch_size, cfg_.lr,
                         cfg_.reach_hidden);
    low_ = SacAgent::make(4 + phi_.d_z, 2, cfg_.policy_hidden, agent_rng_,
                          cfg_.lr);
    high_ = SacAgent::make(4, phi_.d_z, cfg_.policy_hidden, agent_rng_,
                           cfg_.lr);
    refresh_subgoal_box(b_pre_);
    pretrained_ = true;
    if (!cfg_.out_dir.empty()) {
      std::filesystem::create_directories(cfg_.out_dir);
      write_reach_curve();
      save_checkpoints();
    }
  }

  RunMetrics run() {
    const auto t0 = std::chrono::steady_clock::now();
    pretrain();
    open_artifacts();
    while (env_steps_ < cfg_.total_env_steps && !stop_) run_episode();
    if (env_steps_ > 0 && last_eval_step_ != env_steps_) do_eval();
    if (!cfg_.out_dir.empty()) save_checkpoints();
    metrics_.env_steps = env_steps_;
    metrics_.episodes = episodes_done_;
    metrics_.phi_version = phi_.version;
    metrics_.final_success =
        metrics_.evals.empty() ? 0.0 : metrics_.evals.back().success_rate;
    metrics_.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    return metrics_;
  }

  // One Alg.-2 episode: subgoal decisions every c steps, per-step low-level
  // storage and count-grid visits, one HighTransition per completed segment
  // (trailing partial included), cadenced updates and evals.
  void run_episode() {
    pretrain();
    StateVec s = env_.reset(0);
    const std::uint64_t ep_id = next_episode_id_++;
    LatentPoint g = LatentPoint::Zero();
    StateVec seg_start = s;
    double seg_reward = 0.0;
    int seg_begin = 0;
    bool finished = false;
    for (int t = 0;; ++t) {
      if (t % cfg_.c == 0) {
        g = decide_subgoal(s);
        seg_start = s;
        seg_reward = 0.0;
        seg_begin = t;
      }
      grid_.record_visit(phi_.embed(s));

      Eigen::VectorXd obs(6);
      obs << s.to_input(), g;
      const auto ar = low_.act(obs, false, train_rng_);
      const Vec2 a(ar.action[0], ar.action[1]);
      const EnvStep out = env_.step(a);

      Transition tr;
      tr.state = s;
      tr.subgoal = g;
      tr.action = a;
      tr.intrinsic_reward = -(phi_.embed(out.next_state) - g).norm();
      tr.next_state = out.next_state;
      tr.done = out.done;
      tr.episode_id = ep_id;
      tr.step_index = t;
      low_buf_.push(tr);

      seg_reward += out.reward;
      s = out.next_state;
      ++env_steps_;

      if (out.done || (t + 1) % cfg_.c == 0) {
        HighTransition h;
        h.state = seg_start;
        h.chosen_subgoal = g;
        h.ext_reward_sum = seg_reward;
        h.next_state = s;
        h.done = out.done;
        h.episode_id = ep_id;
        h.start_step = seg_begin;
        high_buf_.push(h);
      }

      maybe_update();
      if (env_steps_ % cfg_.eval_every == 0) do_eval();

      if (out.done) {
        finished = true;
        break;
      }
      if (env_steps_ >= cfg_.total_env_steps || stop_) break;
    }
    if (finished) {
      ++episodes_done_;
      if (episodes_done_ % cfg_.repr_interval == 0) retrain_phi();
    }
  }

  LossReport update_low() {
    const SacBatch b =
        assemble_low_batch(low_buf_, phi_, cfg_.batch_size, train_rng_);
    last_low_ = low_.update(b, cfg_.k_fraction, train_rng_);
    return last_low_;
  }

  LossReport update_high() {
    const SacBatch b =
        assemble_high_batch(high_buf_, cfg_.batch_size, train_rng_);
    last_high_ = high_.update(b, std::nullopt, train_rng_);
    return last_high_;
  }

  // test access
  const LespConfig& config() const { return cfg_; }
  ReplayBuffer<Transition>& pre_buffer() { return b_pre_; }
  ReplayBuffer<Transition>& low_buffer() { return low_buf_; }
  ReplayBuffer<HighTransition>& high_buffer() { return high_buf_; }
  SacAgent& low_agent() { return low_; }
  SacAgent& high_agent() { return high_; }
  ReprNet& repr() { return phi_; }
  ReachNet& reach() { return reach_; }
  CountGrid& count_grid() { return grid_; }
  const RunMetrics& metrics() const { return metrics_; }
  long long env_steps() const { return env_steps_; }
  int episodes_done() const { return episodes_done_; }
  const MazeEnv& env() const { return env_; }

 private:
  LatentPoint decide_subgoal(const StateVec& s) {
    ++metrics_.decisions;
    if (train_rng_.uniform() < cfg_.p) {
      ++metrics_.explore_draws;
      std::optional<LatentPoint> l_sel;
      if (cfg_.alpha > 0.0) {
        const auto planned = plan_exploration_landmark(
            b_pre_, s, goal_state_, reach_, phi_, cfg_.n_cov, cfg_.tau,
            cfg_.fps_pool, train_rng_);
        if (planned) l_sel = planned->latent;
      }
      const LatentPoint cur = phi_.embed(s);
      const auto embed = [this](const Eigen::MatrixXd& m) {
        return phi_.embed_batch(m);
      };
      const std::vector<CandidateState> cands = states_within_latent_radius(
          low_buf_, cur, cfg_.r_g, embed,
          static_cast<std::size_t>(cfg_.max_candidates), train_rng_,
          static_cast<std::size_t>(cfg_.scan_budget));
      const SubgoalSelection sel =
          select_subgoal(cands, low_buf_, grid_, phi_, l_sel, cfg_.alpha,
                         cfg_.gamma, cfg_.c);
      if (sel.ok) {
        ++metrics_.explore_events;
        if (events_file_.is_open()) {
          char buf[128];
          std::snprintf(buf, sizeof(buf), "%lld,-1,%.10g,%.10g,0,0,0,0,0,0\n",
                        env_steps_, cur.x(), cur.y());
          events_file_ << buf;
          dump_selection_event(events_file_, env_steps_, sel);
        }
        return sel.subgoal;
      }
      // no candidates in the ball yet: defer to the policy's own subgoal
    }
    const auto r =
        high_.act(Eigen::VectorXd(s.to_input()), false, train_rng_);
    return LatentPoint(r.action[0], r.action[1]);
  }

  void maybe_update() {
    if (env_steps_ <= cfg_.warmup_steps) return;
    if (low_buf_.size() >= static_cast<std::size_t>(cfg_.batch_size) &&
        env_steps_ % cfg_.update_every == 0)
      update_low();
    if (!high_buf_.empty() && env_steps_ % cfg_.c == 0) update_high();
  }

  void do_eval() {
    const double rate =
        evaluate(low_, high_, env_.spec(), cfg_.eval_episodes, cfg_.c);
    EvalPoint pt;
    pt.env_step = env_steps_;
    pt.episode = episodes_done_;
    pt.success_rate = rate;
    pt.critic_loss = last_low_.critic;
    pt.actor_loss = last_low_.actor;
    pt.reg_loss = last_low_.reg;
    pt.triplet_loss = last_triplet_;
    pt.coverage_cells = static_cast<long long>(grid_.counts.size());
    metrics_.evals.push_back(pt);
    last_eval_step_ = env_steps_;
    if (metrics_file_.is_open()) {
      metrics_file_ << pt.env_step << "," << pt.episode << ","
                    << fmt_metric(pt.success_rate) << ","
                    << fmt_metric(pt.critic_loss) << ","
                    << fmt_metric(pt.actor_loss) << ","
                    << fmt_metric(pt.reg_loss) << ","
                    << fmt_metric(pt.triplet_loss) << ","
                    << pt.coverage_cells << "\n";
      metrics_file_.flush();
    }
    if (!cfg_.out_dir.empty()) save_checkpoints();
    if (cfg_.stop_at_success > 0.0 && rate >= cfg_.stop_at_success)
      stop_ = true;
  }

  void retrain_phi() {
    const RetrainOutcome out =
        retrain(phi_, low_buf_, cfg_.repr_retrain_steps, cfg_.c, train_rng_,
                cfg_.batch_size, cfg_.repr_lr);
    if (out.skipped) {
      ++metrics_.retrain_skips;
      return;
    }
    last_triplet_ = out.last_loss;
    refresh_subgoal_box(low_buf_);
  }

  // Subgoal action box for the high-level policy: latent bounding box of a
  // strided buffer sample, with headroom. Deterministic (no rng draws).
  void refresh_subgoal_box(const ReplayBuffer<Transition>& buf) {
    if (buf.empty()) return;
    const std::size_t want = std::min<std::size_t>(buf.size(), 2000);
    const std::size_t stride = std::max<std::size_t>(1, buf.size() / want);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < buf.size() && idx.size() < want; i += stride)
      idx.push_back(i);
    Eigen::MatrixXd in(4, static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i)
      in.col(static_cast<Eigen::Index>(i)) = buf.at(idx[i]).state.to_input();
    const Eigen::MatrixXd z = phi_.embed_batch(in);
    const Eigen::VectorXd lo = z.rowwise().minCoeff();
    const Eigen::VectorXd hi = z.rowwise().maxCoeff();
    high_.set_action_box((lo + hi) / 2.0, (hi - lo) * 0.6);
  }

  void open_artifacts() {
    if (cfg_.out_dir.empty() || metrics_file_.is_open()) return;
    std::filesystem::create_directories(cfg_.out_dir);
    {
      std::ofstream cfg_file(cfg_.out_dir + "/config.txt");
      write_kv(cfg_file, config_to_kv(cfg_));
    }
    metrics_file_.open(cfg_.out_dir + "/metrics.csv");
    metrics_file_ << "env_step,episode,eval_success_rate,critic_loss,"
                     "actor_loss,reg_loss,triplet_loss,coverage_cells\n";
    events_file_.open(cfg_.out_dir + "/events.csv");
    events_file_ << "env_step,cand,zx,zy,novelty_raw,prospect_raw,"
                    "novelty_norm,prospect_norm,score,chosen\n";
  }

  void save_checkpoints() {
    const std::string dir = cfg_.out_dir + "/ckpt";
    std::filesystem::create_directories(dir);
    save_agent(low_, dir + "/low");
    save_agent(high_, dir + "/high");
    std::ofstream repr_file(dir + "/repr.txt");
    save_repr(repr_file, phi_);
    std::ofstream reach_file(dir + "/reach.txt");
    save_reach(reach_file, reach_);
  }

  void write_reach_curve() {
    std::ofstream f(cfg_.out_dir + "/reach_loss.csv");
    f << "sample,loss\n";
    for (std::size_t i = 0; i < reach_curve_.size(); ++i)
      f << i << "," << fmt_metric(reach_curve_[i]) << "\n";
  }

  LespConfig cfg_;
  MazeEnv env_;
  StateVec goal_state_;
  ReplayBuffer<Transition> b_pre_;
  ReplayBuffer<Transition> low_buf_;
  ReplayBuffer<HighTransition> high_buf_;
  Rng walk_rng_, repr_rng_, reach_rng_, agent_rng_, train_rng_;
  ReprNet phi_;
  ReachNet reach_;
  SacAgent low_, high_;
  CountGrid grid_;
  RunMetrics metrics_;
  std::vector<double> reach_curve_;
  bool pretrained_ = false;
  bool stop_ = false;
  long long env_steps_ = 0;
  long long last_eval_step_ = -1;
  int episodes_done_ = 0;
  std::uint64_t next_episode_id_ = 0;
  LossReport last_low_{}, last_high_{};
  double last_triplet_ = 0.0;
  std::ofstream metrics_file_, events_file_;
};

inline RunMetrics run_lesp(const LespConfig& cfg) {
  LespTrainer trainer(cfg);
  return trainer.run();
}

}  // namespace lesp
