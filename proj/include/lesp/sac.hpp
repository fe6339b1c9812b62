#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <vector>

#include "lesp/common.hpp"
#include "lesp/mlp.hpp"
#include "lesp/rng.hpp"

namespace lesp {

// Soft actor-critic with a Gaussian tanh-squashed actor, a single critic
// plus slow target, and a state-specific critic regularizer that penalizes
// drift from a periodically frozen snapshot on the best-learned fraction of
// each batch.
//
// The actor head emits [mean; raw_log_std]; raw values are squashed into
// [kLogStdMin, kLogStdMax] with a tanh rescale so every objective stays
// smooth for gradient checks.

struct RegMask {
  std::vector<double> lambda;  // per batch element, 0 or 1
  double k_fraction = 0.0;
};

// lambda=1 exactly for the round(k*n) smallest losses, ties to lower index
inline RegMask reg_mask(const std::vector<double>& per_element_losses,
                        double k_fraction) {
  if (k_fraction < 0.0 || k_fraction > 1.0)
    throw std::invalid_argument("reg_mask: k_fraction outside [0,1]");
  const std::size_t n = per_element_losses.size();
  const std::size_t keep =
      static_cast<std::size_t>(std::llround(k_fraction * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return per_element_losses[a] < per_element_losses[b];
                   });
  RegMask mask;
  mask.k_fraction = k_fraction;
  mask.lambda.assign(n, 0.0);
  for (std::size_t i = 0; i < keep; ++i) mask.lambda[order[i]] = 1.0;
  return mask;
}

struct SacBatch {
  Eigen::MatrixXd obs;       // obs_dim x n (actor input: state, or state+goal)
  Eigen::MatrixXd action;    // act_dim x n
  Eigen::VectorXd reward;    // n
  Eigen::MatrixXd next_obs;  // obs_dim x n
  Eigen::VectorXd done;      // n, each 0 or 1

  Eigen::Index size() const { return reward.size(); }
};

struct LossReport {
  double critic = 0.0;  // mean squared TD error over the batch
  double actor = 0.0;
  double reg = 0.0;  // stability penalty, 0 when no mask requested
  std::size_t masked = 0;
};

class SacAgent {
 public:
  static constexpr double kLogStdMin = -20.0;
  static constexpr double kLogStdMax = 2.0;

  Mlp actor;            // obs -> [mean; raw_log_std], 2*act_dim outputs
  Mlp critic;           // [obs; action] -> scalar Q
  Mlp target_critic;    // slow copy for TD targets
  Mlp critic_snapshot;  // frozen Q_old for the stability penalty
  AdamState actor_opt, critic_opt;

  double alpha_sac = 0.2;
  double gamma = 0.99;
  double rho = 0.005;            // target soft-update coefficient
  int snapshot_interval = 500;   // critic updates between snapshot refreshes
  std::uint64_t critic_updates = 0;

  int obs_dim = 0, act_dim = 0;
  // action box: env action = center + half .* tanh_output
  Eigen::VectorXd act_center, act_half;

  static SacAgent make(int obs_dim, int act_dim,
                       const std::vector<int>& hidden, Rng& rng,
                       double learning_rate = 3e-4) {
    SacAgent a;
    a.obs_dim = obs_dim;
    a.act_dim = act_dim;
    std::vector<int> actor_sizes{obs_dim};
    std::vector<int> critic_sizes{obs_dim + act_dim};
    for (int h : hidden) {
      actor_sizes.push_back(h);
      critic_sizes.push_back(h);
    }
    actor_sizes.push_back(2 * act_dim);
    critic_sizes.push_back(1);
    a.actor = Mlp::glorot(actor_sizes, rng);
    a.critic = Mlp::glorot(critic_sizes, rng);
    a.target_critic = a.critic;
    a.critic_snapshot = a.critic;
    a.actor_opt = AdamState::init(a.actor, learning_rate);
    a.critic_opt = AdamState::init(a.critic, learning_rate);
    a.act_center = Eigen::VectorXd::Zero(act_dim);
    a.act_half = Eigen::VectorXd::Ones(act_dim);
    return a;
  }

  // components of half are floored at 1 so the box never collapses
  void set_action_box(const Eigen::VectorXd& center,
                      const Eigen::VectorXd& half) {
    if (center.size() != act_dim || half.size() != act_dim)
      throw std::invalid_argument("action box dimension mismatch");
    act_center = center;
    act_half = half.cwiseMax(1.0);
  }

  struct ActResult {
    Eigen::VectorXd action;
    double log_prob = 0.0;
  };

  ActResult act(const Eigen::VectorXd& input, bool deterministic,
                Rng& rng) const {
    if (input.size() != obs_dim)
      throw std::invalid_argument("act: input dimension mismatch");
    const Eigen::VectorXd out = mlp_forward(actor, input);
    if (!out.allFinite()) throw TrainingError("act: non-finite actor output");
    const Eigen::VectorXd mean = out.head(act_dim);
    const Eigen::VectorXd log_std = squash_log_std(out.tail(act_dim));
    const Eigen::VectorXd sigma = log_std.array().exp();
    Eigen::VectorXd eps = Eigen::VectorXd::Zero(act_dim);
    if (!deterministic) eps = rng.normal_vec(act_dim);
    const Eigen::VectorXd x = mean + sigma.cwiseProduct(eps);
    ActResult res;
    res.action.resize(act_dim);
    res.log_prob = 0.0;
    for (int d = 0; d < act_dim; ++d) {
      const double u = std::tanh(x[d]);
      res.action[d] =
          act_center[d] +
          act_half[d] * std::clamp(u, -(1.0 - 1e-12), 1.0 - 1e-12);
      res.log_prob += gauss_log_density(eps[d], log_std[d]) -
                      log1m_tanh_sq(x[d]) - std::log(act_half[d]);
    }
    return res;
  }

  // Per-element squared TD losses with a' freshly sampled from the
  // current actor. Returns the losses; fills optional out-params used by
  // update() so the gradient step reuses the same forward pass.
  std::vector<double> critic_loss(const SacBatch& batch, Rng& rng,
                                  Eigen::RowVectorXd* q_out = nullptr,
                                  Eigen::RowVectorXd* y_out = nullptr,
                                  ForwardCache* cache_out = nullptr) const {
    check_batch(batch);
    const Eigen::Index n = batch.size();
    // next action from the current actor (first rng consumer in an update)
    const Eigen::MatrixXd eps = rng.normal_mat(act_dim, n);
    Eigen::MatrixXd next_a(act_dim, n);
    sample_actions(batch.next_obs, eps, &next_a, nullptr, nullptr, nullptr,
                   nullptr, nullptr);
    const Eigen::RowVectorXd q_next =
        mlp_forward(target_critic, stack(batch.next_obs, next_a));
    // Hard TD target: the entropy bonus lives in the actor objective only.
    // With success-terminated episodes and sparse reward, an entropy term
    // in the target is a perpetual continuation annuity that outweighs the
    // terminal reward, and the critic learns to value avoiding the goal.
    Eigen::RowVectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i)
      y[i] = batch.reward[i] + gamma * (1.0 - batch.done[i]) * q_next[i];
    ForwardCache cache;
    const Eigen::RowVectorXd q =
        mlp_forward(critic, stack(batch.obs, batch.action), &cache);
    std::vector<double> per(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d = q[i] - y[i];
      per[static_cast<std::size_t>(i)] = 0.5 * d * d;
    }
    if (q_out) *q_out = q;
    if (y_out) *y_out = y;
    if (cache_out) *cache_out = std::move(cache);
    return per;
  }

  // mean lambda_i * |Q(s_i,a_i) - Q_old(s_i,a_i)| over the whole batch;
  // *grads (w.r.t. the live critic) filled when non-null
  double stability_penalty(const SacBatch& batch, const RegMask& mask,
                           MlpGrads* grads = nullptr) const {
    check_batch(batch);
    if (static_cast<Eigen::Index>(mask.lambda.size()) != batch.size())
      throw std::invalid_argument("stability_penalty: mask length mismatch");
    const Eigen::Index n = batch.size();
    const Eigen::MatrixXd in = stack(batch.obs, batch.action);
    ForwardCache cache;
    const Eigen::RowVectorXd q = mlp_forward(critic, in, &cache);
    const Eigen::RowVectorXd q_old = mlp_forward(critic_snapshot, in);
    double sum = 0.0;
    Eigen::MatrixXd og = Eigen::MatrixXd::Zero(1, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double lam = mask.lambda[static_cast<std::size_t>(i)];
      const double diff = q[i] - q_old[i];
      sum += lam * std::abs(diff);
      og(0, i) = lam * sign(diff) / static_cast<double>(n);
    }
    if (grads) *grads = mlp_backward(critic, cache, og);
    return sum / static_cast<double>(n);
  }

  // mean(log pi(a|s) - Q(s,a)/alpha) with reparameterized a; gradient w.r.t.
  // the actor only. Returns the loss; *grads filled when non-null.
  double actor_loss(const SacBatch& batch, Rng& rng,
                    MlpGrads* grads = nullptr) const {
    check_batch(batch);
    const Eigen::Index n = batch.size();
    const Eigen::MatrixXd eps = rng.normal_mat(act_dim, n);
    Eigen::MatrixXd a(act_dim, n), u(act_dim, n), log_std(act_dim, n);
    Eigen::RowVectorXd logp(n);
    ForwardCache actor_cache;
    sample_actions(batch.obs, eps, &a, &logp, nullptr, &u, &log_std,
                   &actor_cache);

    ForwardCache critic_cache;
    const Eigen::RowVectorXd q =
        mlp_forward(critic, stack(batch.obs, a), &critic_cache);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      loss += logp[i] - q[i] / alpha_sac;
    loss /= static_cast<double>(n);
    if (!std::isfinite(loss)) throw TrainingError("actor loss non-finite");
    if (!grads) return loss;

    // dL/dQ_i = -1/(alpha n): chain through the critic to its action input
    Eigen::MatrixXd critic_og =
        Eigen::MatrixXd::Constant(1, n, -1.0 / (alpha_sac * static_cast<double>(n)));
    Eigen::MatrixXd critic_in_grad;
    mlp_backward(critic, critic_cache, critic_og, &critic_in_grad);
    const Eigen::MatrixXd dL_da = critic_in_grad.bottomRows(act_dim);

    // entropy path: d log pi / dx = 2 tanh(x) per dimension
    const Eigen::MatrixXd& head = actor_cache.pre.back();  // raw actor output
    Eigen::MatrixXd g_mean(act_dim, n), g_raw(act_dim, n);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int d = 0; d < act_dim; ++d) {
        const double dlogp_dx = 2.0 * u(d, i);
        const double sigma = std::exp(log_std(d, i));
        const double du_dx = 1.0 - u(d, i) * u(d, i);
        const double gx =
            inv_n * dlogp_dx + dL_da(d, i) * act_half[d] * du_dx;
        g_mean(d, i) = gx;
        // log pi depends on log_std directly (-1) and through x (sigma*eps)
        const double g_log_std = gx * sigma * eps(d, i) - inv_n;
        g_raw(d, i) = g_log_std * dsquash_log_std(head(act_dim + d, i));
      }
    }
    Eigen::MatrixXd actor_og(2 * act_dim, n);
    actor_og.topRows(act_dim) = g_mean;
    actor_og.bottomRows(act_dim) = g_raw;
    *grads = mlp_backward(actor, actor_cache, actor_og);
    return loss;
  }

  // One critic Adam step (TD loss plus the stability penalty when
  // k_fraction is given), one actor Adam step, target soft update, snapshot
  // refresh every snapshot_interval critic updates. The mask is built from
  // this batch's own per-element TD losses so its ordering invariant holds
  // for the exact losses being optimized.
  LossReport update(const SacBatch& batch, std::optional<double> k_fraction,
                    Rng& rng) {
    check_batch(batch);
    const Eigen::Index n = batch.size();
    Eigen::RowVectorXd q, y;
    ForwardCache critic_cache;
    const std::vector<double> per = critic_loss(batch, rng, &q, &y, &critic_cache);

    LossReport report;
    report.critic =
        std::accumulate(per.begin(), per.end(), 0.0) / static_cast<double>(n);
    Eigen::MatrixXd og(1, n);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (Eigen::Index i = 0; i < n; ++i) og(0, i) = (q[i] - y[i]) * inv_n;

    if (k_fraction.has_value()) {
      const RegMask mask = reg_mask(per, *k_fraction);
      const Eigen::RowVectorXd q_old =
          mlp_forward(critic_snapshot, stack(batch.obs, batch.action));
      double reg_sum = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double lam = mask.lambda[static_cast<std::size_t>(i)];
        if (lam == 0.0) continue;
        const double diff = q[i] - q_old[i];
        reg_sum += lam * std::abs(diff);
        og(0, i) += lam * sign(diff) * inv_n;
        ++report.masked;
      }
      report.reg = reg_sum * inv_n;
    }
    if (!std::isfinite(report.critic) || !std::isfinite(report.reg))
      throw TrainingError("critic loss non-finite");
    const MlpGrads critic_grads = mlp_backward(critic, critic_cache, og);
    adam_step(critic, critic_grads, critic_opt);

    MlpGrads actor_grads;
    report.actor = actor_loss(batch, rng, &actor_grads);
    adam_step(actor, actor_grads, actor_opt);

    soft_update(target_critic, critic, rho);
    ++critic_updates;
    if (critic_updates % static_cast<std::uint64_t>(snapshot_interval) == 0)
      critic_snapshot = critic;
    return report;
  }

  void refresh_snapshot() { critic_snapshot = critic; }

  static void soft_update(Mlp& target, const Mlp& src, double rho) {
    for (std::size_t l = 0; l < src.weights.size(); ++l) {
      target.weights[l] = (1.0 - rho) * target.weights[l] + rho * src.weights[l];
      target.biases[l] = (1.0 - rho) * target.biases[l] + rho * src.biases[l];
    }
  }

  static Eigen::VectorXd squash_log_std(const Eigen::VectorXd& raw) {
    Eigen::VectorXd out(raw.size());
    for (Eigen::Index i = 0; i < raw.size(); ++i)
      out[i] = kLogStdMin +
               0.5 * (kLogStdMax - kLogStdMin) * (std::tanh(raw[i]) + 1.0);
    return out;
  }

 private:
  static void check_finite_row(const Eigen::RowVectorXd& v, const char* what) {
    if (!v.allFinite()) throw TrainingError(std::string(what) + " non-finite");
  }

  void check_batch(const SacBatch& batch) const {
    const Eigen::Index n = batch.size();
    if (n == 0) throw std::invalid_argument("sac: empty batch");
    if (batch.obs.rows() != obs_dim || batch.next_obs.rows() != obs_dim ||
        batch.action.rows() != act_dim || batch.obs.cols() != n ||
        batch.next_obs.cols() != n || batch.action.cols() != n ||
        batch.done.size() != n)
      throw std::invalid_argument("sac: batch shape mismatch");
  }

  static Eigen::MatrixXd stack(const Eigen::MatrixXd& top,
                               const Eigen::MatrixXd& bottom) {
    Eigen::MatrixXd out(top.rows() + bottom.rows(), top.cols());
    out.topRows(top.rows()) = top;
    out.bottomRows(bottom.rows()) = bottom;
    return out;
  }

  static double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

  // numerically stable log(1 - tanh(x)^2) = 2(log 2 - |x| - log1p(e^-2|x|))
  static double log1m_tanh_sq(double x) {
    const double ax = std::abs(x);
    return 2.0 * (std::log(2.0) - ax - std::log1p(std::exp(-2.0 * ax)));
  }

  static double gauss_log_density(double eps, double log_std) {
    static const double half_log_2pi = 0.5 * std::log(2.0 * M_PI);
    return -0.5 * eps * eps - half_log_2pi - log_std;
  }

  static double dsquash_log_std(double raw) {
    const double th = std::tanh(raw);
    return 0.5 * (kLogStdMax - kLogStdMin) * (1.0 - th * th);
  }

  // Sample tanh-squashed actions for a batch of observations with given
  // noise. Fills any non-null outputs; logp includes the box correction.
  void sample_actions(const Eigen::MatrixXd& obs, const Eigen::MatrixXd& eps,
                      Eigen::MatrixXd* a_out, Eigen::RowVectorXd* logp_out,
                      Eigen::MatrixXd* x_out, Eigen::MatrixXd* u_out,
                      Eigen::MatrixXd* log_std_out,
                      ForwardCache* cache_out) const {
    const Eigen::Index n = obs.cols();
    ForwardCache cache;
    const Eigen::MatrixXd head =
        mlp_forward(actor, obs, cache_out ? cache_out : &cache);
    if (!head.allFinite()) throw TrainingError("actor output non-finite");
    double half_corr = 0.0;
    for (int d = 0; d < act_dim; ++d) half_corr += std::log(act_half[d]);
    if (logp_out) logp_out->resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double logp = -half_corr;
      for (int d = 0; d < act_dim; ++d) {
        const double mean = head(d, i);
        const double log_std = kLogStdMin +
                               0.5 * (kLogStdMax - kLogStdMin) *
                                   (std::tanh(head(act_dim + d, i)) + 1.0);
        const double sigma = std::exp(log_std);
        const double x = mean + sigma * eps(d, i);
        const double u = std::tanh(x);
        if (a_out)
          (*a_out)(d, i) =
              act_center[d] +
              act_half[d] * std::clamp(u, -(1.0 - 1e-12), 1.0 - 1e-12);
        if (x_out) (*x_out)(d, i) = x;
        if (u_out) (*u_out)(d, i) = u;
        if (log_std_out) (*log_std_out)(d, i) = log_std;
        logp += gauss_log_density(eps(d, i), log_std) - log1m_tanh_sq(x);
      }
      if (logp_out) (*logp_out)[i] = logp;
    }
    if (logp_out) check_finite_row(*logp_out, "log prob");
  }
};

// One checkpoint file per network plus a metadata sidecar. Optimizer
// moments are not saved: a loaded agent serves evaluation and export, not
// exact training resumption.
inline void save_agent(const SacAgent& a, const std::string& prefix) {
  const auto write_net = [](const std::string& path, const Mlp& net) {
    std::ofstream os(path);
    if (!os) throw TrainingError("cannot write " + path);
    save_mlp(os, net);
  };
  write_net(prefix + ".actor", a.actor);
  write_net(prefix + ".critic", a.critic);
  write_net(prefix + ".target", a.target_critic);
  write_net(prefix + ".snapshot", a.critic_snapshot);
  std::FILE* f = std::fopen((prefix + ".meta").c_str(), "w");
  if (!f) throw TrainingError("cannot write " + prefix + ".meta");
  std::fprintf(f, "obs_dim=%d\nact_dim=%d\n", a.obs_dim, a.act_dim);
  std::fprintf(f, "alpha_sac=%a\ngamma=%a\nrho=%a\n", a.alpha_sac, a.gamma,
               a.rho);
  std::fprintf(f, "snapshot_interval=%d\ncritic_updates=%llu\n",
               a.snapshot_interval,
               static_cast<unsigned long long>(a.critic_updates));
  std::fprintf(f, "act_center=");
  for (int d = 0; d < a.act_dim; ++d)
    std::fprintf(f, "%s%a", d ? " " : "", a.act_center[d]);
  std::fprintf(f, "\nact_half=");
  for (int d = 0; d < a.act_dim; ++d)
    std::fprintf(f, "%s%a", d ? " " : "", a.act_half[d]);
  std::fprintf(f, "\n");
  std::fclose(f);
}

inline SacAgent load_agent(const std::string& prefix,
                           double learning_rate = 3e-4) {
  SacAgent a;
  const auto read_net = [](const std::string& path) {
    std::ifstream is(path);
    if (!is) throw TrainingError("cannot read " + path);
    return load_mlp(is);
  };
  a.actor = read_net(prefix + ".actor");
  a.critic = read_net(prefix + ".critic");
  a.target_critic = read_net(prefix + ".target");
  a.critic_snapshot = read_net(prefix + ".snapshot");
  std::ifstream meta(prefix + ".meta");
  if (!meta) throw TrainingError("cannot read " + prefix + ".meta");
  std::string line;
  auto parse_vec = [](const std::string& s, Eigen::VectorXd& out) {
    std::istringstream is(s);
    std::vector<double> vals;
    std::string tok;
    while (is >> tok) vals.push_back(std::strtod(tok.c_str(), nullptr));
    out = Eigen::Map<Eigen::VectorXd>(vals.data(),
                                      static_cast<Eigen::Index>(vals.size()));
  };
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "obs_dim")
      a.obs_dim = std::stoi(val);
    else if (key == "act_dim")
      a.act_dim = std::stoi(val);
    else if (key == "alpha_sac")
      a.alpha_sac = std::strtod(val.c_str(), nullptr);
    else if (key == "gamma")
      a.gamma = std::strtod(val.c_str(), nullptr);
    else if (key == "rho")
      a.rho = std::strtod(val.c_str(), nullptr);
    else if (key == "snapshot_interval")
      a.snapshot_interval = std::stoi(val);
    else if (key == "critic_updates")
      a.critic_updates = std::stoull(val);
    else if (key == "act_center")
      parse_vec(val, a.act_center);
    else if (key == "act_half")
      parse_vec(val, a.act_half);
    else
      throw TrainingError("agent meta: unknown key '" + key + "'");
  }
  if (a.act_center.size() != a.act_dim || a.act_half.size() != a.act_dim)
    throw TrainingError("agent meta: action box dimension mismatch");
  a.actor_opt = AdamState::init(a.actor, learning_rate);
  a.critic_opt = AdamState::init(a.critic, learning_rate);
  return a;
}

}  // namespace lesp
