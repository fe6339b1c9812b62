#pragma once

#include "lesp/common.hpp"
#include "lesp/maze.hpp"
#include "lesp/mlp.hpp"
#include "lesp/replay.hpp"
#include "lesp/repr.hpp"
#include "lesp/rng.hpp"

namespace lesp {

// Reachability value V(s, g): negated step estimate from state s to latent
// goal g, capped at h_max. Trained once on the random-walk buffer and frozen;
// goals are re-embedded with the current phi at query time.
struct ReachNet {
  Mlp net;
  int h_max = 50;
  int phi_version_at_training = 0;

  double value(const StateVec& s, const LatentPoint& g) const {
    Eigen::VectorXd in(6);
    in << s.to_input(), g;
    return mlp_forward(net, in)[0];
  }

  // s_inputs is 4 x n, goals is 2 x n; returns n values
  Eigen::RowVectorXd value_batch(const Eigen::MatrixXd& s_inputs,
                                 const Eigen::MatrixXd& goals) const {
    if (s_inputs.rows() != 4 || goals.rows() != 2 ||
        s_inputs.cols() != goals.cols())
      throw std::invalid_argument("value_batch: bad input shapes");
    Eigen::MatrixXd in(6, s_inputs.cols());
    in.topRows(4) = s_inputs;
    in.bottomRows(2) = goals;
    return mlp_forward(net, in).row(0);
  }
};

inline void save_reach(std::ostream& os, const ReachNet& reach) {
  os << "h_max " << reach.h_max << "\n";
  os << "phi_version " << reach.phi_version_at_training << "\n";
  save_mlp(os, reach.net);
}

inline ReachNet load_reach(std::istream& is) {
  ReachNet reach;
  std::string key;
  for (int i = 0; i < 2; ++i) {
    if (!(is >> key)) throw TrainingError("reach checkpoint: truncated header");
    if (key == "h_max")
      is >> reach.h_max;
    else if (key == "phi_version")
      is >> reach.phi_version_at_training;
    else
      throw TrainingError("reach checkpoint: unknown key " + key);
  }
  reach.net = load_mlp(is);
  if (reach.net.layer_sizes.back() != 1)
    throw TrainingError("reach checkpoint: net must be scalar-valued");
  return reach;
}

// Uniform-random action rollouts appended to b_pre with full trajectory
// indexing. Episode ids start at episode_id_base so callers can keep ids
// disjoint across collection phases.
inline void collect_random_walk(MazeEnv& env, int episodes,
                                ReplayBuffer<Transition>& b_pre, Rng& rng,
                                std::uint64_t episode_id_base = 0) {
  for (int ep = 0; ep < episodes; ++ep) {
    StateVec s = env.reset(0);
    const std::uint64_t id = episode_id_base + static_cast<std::uint64_t>(ep);
    for (int t = 0;; ++t) {
      const Vec2 a(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
      const EnvStep out = env.step(a);
      Transition tr;
      tr.state = s;
      tr.subgoal = LatentPoint::Zero();
      tr.action = a;
      tr.intrinsic_reward = 0.0;
      tr.next_state = out.next_state;
      tr.done = out.done;
      tr.episode_id = id;
      tr.step_index = t;
      b_pre.push(tr);
      s = out.next_state;
      if (out.done) break;
    }
  }
}

// One regression pair: anchor state, goal-source state d steps later on the
// same trajectory, target -d with 0 <= d <= h_max.
struct ReachPair {
  StateVec s;
  StateVec goal_state;
  int gap = 0;
  double target() const { return -static_cast<double>(gap); }
};

inline bool sample_reach_pair(const ReplayBuffer<Transition>& buffer,
                              int h_max, Rng& rng, ReachPair* out,
                              int max_attempts = 1000) {
  if (buffer.empty()) return false;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    const Transition& anchor = buffer.at(rng.uniform_int(buffer.size()));
    const int last = buffer.last_step_of(anchor.episode_id);
    const int reach = std::min(h_max, last - anchor.step_index);
    if (reach < 0) continue;
    const int d = static_cast<int>(rng.uniform_int(reach + 1));
    const Transition* far =
        buffer.find_step(anchor.episode_id, anchor.step_index + d);
    if (!far) continue;
    out->s = anchor.state;
    out->goal_state = far->state;
    out->gap = d;
    return true;
  }
  return false;
}

// Supervised fit of V(s_i, phi(s_j)) -> -(j - i) on same-trajectory pairs.
// Loss per pair is (V - target)^2 / 2; loss_curve (when given) records the
// batch loss every 100 steps plus the final step.
inline ReachNet train_reach(const ReplayBuffer<Transition>& b_pre,
                            const ReprNet& phi, int steps, Rng& rng,
                            int h_max = 50,
                            std::vector<double>* loss_curve = nullptr,
                            int batch_size = 128, double lr = 3e-4,
                            const std::vector<int>& hidden = {256, 256}) {
  std::vector<int> sizes;
  sizes.push_back(4 + phi.d_z);
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  ReachNet reach;
  reach.net = Mlp::glorot(sizes, rng);
  reach.h_max = h_max;
  reach.phi_version_at_training = phi.version;

  AdamState opt = AdamState::init(reach.net, lr);
  std::vector<ReachPair> pairs(static_cast<std::size_t>(batch_size));
  Eigen::MatrixXd goal_in(4, batch_size);
  Eigen::MatrixXd in(6, batch_size);
  Eigen::RowVectorXd target(batch_size);
  for (int step = 0; step < steps; ++step) {
    for (int i = 0; i < batch_size; ++i) {
      if (!sample_reach_pair(b_pre, h_max, rng, &pairs[static_cast<std::size_t>(i)]))
        throw TrainingError("train_reach: no same-trajectory pairs available");
      in.col(i).head(4) = pairs[static_cast<std::size_t>(i)].s.to_input();
      goal_in.col(i) = pairs[static_cast<std::size_t>(i)].goal_state.to_input();
      target[i] = pairs[static_cast<std::size_t>(i)].target();
    }
    in.bottomRows(2) = phi.embed_batch(goal_in);

    ForwardCache cache;
    const Eigen::RowVectorXd v = mlp_forward(reach.net, in, &cache).row(0);
    const Eigen::RowVectorXd err = v - target;
    const double loss = 0.5 * err.squaredNorm() / batch_size;
    if (!std::isfinite(loss)) throw TrainingError("reach loss non-finite");
    const Eigen::MatrixXd og = err / static_cast<double>(batch_size);
    MlpGrads grads = mlp_backward(reach.net, cache, og);
    adam_step(reach.net, grads, opt);
    if (loss_curve && (step % 100 == 0 || step == steps - 1))
      loss_curve->push_back(loss);
  }
  return reach;
}

}  // namespace lesp
