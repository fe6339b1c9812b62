#pragma once

#include "lesp/common.hpp"
#include "lesp/maze.hpp"
#include "lesp/mlp.hpp"
#include "lesp/replay.hpp"
#include "lesp/rng.hpp"

namespace lesp {

// Slow-feature triple: anchor state plus its 1-step and c-step successors
// from the same trajectory. Gaps are carried so the loss can reject
// malformed spacing instead of silently training on it.
struct ReprTriple {
  StateVec anchor, next, far;
  int next_gap = 1;
  int far_gap = 0;
};

// Latent embedding phi: 4-d state input -> d_z latent coordinates, trained
// so consecutive states embed close while c-step-apart states keep a margin.
struct ReprNet {
  Mlp net;
  int d_z = 2;
  double margin = 2.0;
  int version = 0;

  static ReprNet make(Rng& rng, int hidden = 100, double margin = 2.0) {
    ReprNet r;
    r.net = Mlp::glorot({4, hidden, 2}, rng);
    r.margin = margin;
    return r;
  }

  LatentPoint embed(const StateVec& s) const {
    return mlp_forward(net, Eigen::VectorXd(s.to_input()));
  }

  // columns are 4-d state inputs; result columns are latent points
  Eigen::MatrixXd embed_batch(const Eigen::MatrixXd& inputs) const {
    return mlp_forward(net, inputs);
  }
};

// mean over triples of |z_a - z_n| + max(0, margin - |z_a - z_f|);
// *grads (w.r.t. repr.net) filled when non-null
inline double triplet_loss(const ReprNet& repr,
                           const std::vector<ReprTriple>& triples, int c,
                           MlpGrads* grads = nullptr) {
  if (triples.empty()) throw std::invalid_argument("triplet_loss: empty batch");
  const Eigen::Index n = static_cast<Eigen::Index>(triples.size());
  for (const auto& t : triples)
    if (t.next_gap != 1 || t.far_gap != c)
      throw std::invalid_argument("triplet_loss: triple spacing must be 1/c");

  // one batched pass over [anchors | nexts | fars]
  Eigen::MatrixXd in(4, 3 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    in.col(i) = triples[static_cast<std::size_t>(i)].anchor.to_input();
    in.col(n + i) = triples[static_cast<std::size_t>(i)].next.to_input();
    in.col(2 * n + i) = triples[static_cast<std::size_t>(i)].far.to_input();
  }
  ForwardCache cache;
  const Eigen::MatrixXd z = mlp_forward(repr.net, in, &cache);

  double loss = 0.0;
  Eigen::MatrixXd og = Eigen::MatrixXd::Zero(2, 3 * n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector2d d1 = z.col(i) - z.col(n + i);
    const Eigen::Vector2d d2 = z.col(i) - z.col(2 * n + i);
    const double n1 = d1.norm();
    const double n2 = d2.norm();
    loss += n1 + std::max(0.0, repr.margin - n2);
    if (grads) {
      if (n1 > 0) {
        og.col(i) += inv_n * d1 / n1;
        og.col(n + i) -= inv_n * d1 / n1;
      }
      if (repr.margin - n2 > 0 && n2 > 0) {
        og.col(i) -= inv_n * d2 / n2;
        og.col(2 * n + i) += inv_n * d2 / n2;
      }
    }
  }
  loss *= inv_n;
  if (!std::isfinite(loss)) throw TrainingError("triplet loss non-finite");
  if (grads) *grads = mlp_backward(repr.net, cache, og);
  return loss;
}

// Draw one (t, t+1, t+c) triple uniformly over stored anchor records; fails
// only when no stored record has both successors present.
inline bool sample_triple(const ReplayBuffer<Transition>& buffer, int c,
                          Rng& rng, ReprTriple* out,
                          int max_attempts = 1000) {
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    const Transition& anchor = buffer.at(rng.uniform_int(buffer.size()));
    const Transition* nxt =
        buffer.find_step(anchor.episode_id, anchor.step_index + 1);
    const Transition* far =
        buffer.find_step(anchor.episode_id, anchor.step_index + c);
    if (!nxt || !far) continue;
    out->anchor = anchor.state;
    out->next = nxt->state;
    out->far = far->state;
    out->next_gap = 1;
    out->far_gap = c;
    return true;
  }
  return false;
}

inline void save_repr(std::ostream& os, const ReprNet& repr) {
  os << "d_z " << repr.d_z << "\n";
  os << "margin " << hexfloat_str(repr.margin) << "\n";
  os << "version " << repr.version << "\n";
  save_mlp(os, repr.net);
}

inline ReprNet load_repr(std::istream& is) {
  ReprNet repr;
  std::string key;
  for (int i = 0; i < 3; ++i) {
    if (!(is >> key)) throw TrainingError("repr checkpoint: truncated header");
    if (key == "d_z")
      is >> repr.d_z;
    else if (key == "margin")
      repr.margin = read_double_token(is, "repr checkpoint");
    else if (key == "version")
      is >> repr.version;
    else
      throw TrainingError("repr checkpoint: unknown key " + key);
  }
  repr.net = load_mlp(is);
  if (repr.net.layer_sizes.back() != repr.d_z)
    throw TrainingError("repr checkpoint: net output dim != d_z");
  return repr;
}

struct RetrainOutcome {
  bool skipped = false;
  double last_loss = 0.0;
  int steps_done = 0;
};

// Warm-start retraining on freshly sampled triples. A successful call (data
// permitting, including steps=0) bumps the version; when the buffer holds no
// complete triple the call skips and leaves the net untouched.
inline RetrainOutcome retrain(ReprNet& repr,
                              const ReplayBuffer<Transition>& buffer,
                              int steps, int c, Rng& rng, int batch_size = 128,
                              double lr = 1e-4) {
  RetrainOutcome outcome;
  if (buffer.empty()) {
    outcome.skipped = true;
    return outcome;
  }
  {
    ReprTriple probe;
    if (!sample_triple(buffer, c, rng, &probe)) {
      outcome.skipped = true;
      return outcome;
    }
  }
  AdamState opt = AdamState::init(repr.net, lr);
  std::vector<ReprTriple> batch(static_cast<std::size_t>(batch_size));
  for (int step = 0; step < steps; ++step) {
    for (auto& t : batch) {
      if (!sample_triple(buffer, c, rng, &t))
        throw TrainingError("repr retrain: triple pool vanished mid-run");
    }
    MlpGrads grads;
    outcome.last_loss = triplet_loss(repr, batch, c, &grads);
    adam_step(repr.net, grads, opt);
    ++outcome.steps_done;
  }
  repr.version += 1;
  return outcome;
}

}  // namespace lesp
