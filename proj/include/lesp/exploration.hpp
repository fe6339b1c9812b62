#pragma once

#include <optional>
#include <unordered_map>

#include "lesp/common.hpp"
#include "lesp/replay.hpp"
#include "lesp/repr.hpp"

namespace lesp {

// Visit counter over a fixed discretization of latent space. Counts are
// recorded in whatever phi version is current at visit time and are not
// re-binned after retrains.
struct CountGrid {
  double cell_size = 2.0;
  std::unordered_map<std::uint64_t, long long> counts;
  long long total = 0;

  static std::uint64_t key(int cx, int cy) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(cx)) << 32) |
           static_cast<std::uint32_t>(cy);
  }

  std::uint64_t cell_of(const LatentPoint& p) const {
    return key(static_cast<int>(std::floor(p.x() / cell_size)),
               static_cast<int>(std::floor(p.y() / cell_size)));
  }

  void record_visit(const LatentPoint& p) {
    if (!p.allFinite())
      throw std::invalid_argument("record_visit: non-finite point");
    counts[cell_of(p)] += 1;
    total += 1;
  }

  long long count_at(const LatentPoint& p) const {
    const auto it = counts.find(cell_of(p));
    return it == counts.end() ? 0 : it->second;
  }

  void reset() {
    counts.clear();
    total = 0;
  }
};

// Negated discounted visit-count sum along the candidate's own stored
// trajectory at strides of c: -(n_i + gamma n_{i+c} + gamma^2 n_{i+2c} + ...),
// truncated where the trajectory ends or eviction removed the step. A
// candidate whose anchor step is gone entirely degrades to -n(phi(s)) and
// flags the fallback.
inline double novelty(const CountGrid& grid,
                      const ReplayBuffer<Transition>& buffer,
                      const CandidateState& cand, const ReprNet& phi,
                      double gamma, int c, bool* fell_back = nullptr) {
  if (fell_back) *fell_back = false;
  if (c < 1) throw std::invalid_argument("novelty: stride must be positive");
  const Transition* anchor = buffer.find_step(cand.episode_id, cand.step_index);
  if (!anchor) {
    if (fell_back) *fell_back = true;
    return -static_cast<double>(grid.count_at(phi.embed(cand.state)));
  }
  double sum = 0.0;
  double discount = 1.0;
  for (int step = cand.step_index;; step += c) {
    const Transition* t = buffer.find_step(cand.episode_id, step);
    if (!t) break;
    sum += discount * static_cast<double>(grid.count_at(phi.embed(t->state)));
    discount *= gamma;
  }
  return -sum;
}

// negated latent distance to the selected landmark
inline double prospect(const LatentPoint& g, const LatentPoint& l_sel) {
  if (!g.allFinite() || !l_sel.allFinite())
    throw std::invalid_argument("prospect: non-finite point");
  return -(g - l_sel).norm();
}

struct ScoredCandidate {
  StateVec state;
  LatentPoint latent = LatentPoint::Zero();
  double novelty_raw = 0.0;
  double prospect_raw = 0.0;
  double novelty_norm = 0.0;
  double prospect_norm = 0.0;
  double score = 0.0;
  bool novelty_fell_back = false;
};

struct SubgoalSelection {
  bool ok = false;
  LatentPoint subgoal = LatentPoint::Zero();
  int index = -1;
  std::vector<ScoredCandidate> scored;
};

namespace detail {
// min-max to [0,1]; a constant measure normalizes to all zeros
inline void minmax_normalize(std::vector<ScoredCandidate>& scored,
                             double ScoredCandidate::* raw,
                             double ScoredCandidate::* norm) {
  double lo = scored.front().*raw, hi = scored.front().*raw;
  for (const auto& s : scored) {
    lo = std::min(lo, s.*raw);
    hi = std::max(hi, s.*raw);
  }
  for (auto& s : scored) s.*norm = (hi == lo) ? 0.0 : (s.*raw - lo) / (hi - lo);
}
}  // namespace detail

// Score every candidate in the r_g ball (callers pre-filter via the replay
// radius query) and return the argmax of novelty_norm + alpha*prospect_norm.
// Without a selected landmark the prospect term is dropped. Ties break to the
// lowest candidate index; an empty set signals the caller to defer to the
// policy's own subgoal.
inline SubgoalSelection select_subgoal(
    const std::vector<CandidateState>& candidates,
    const ReplayBuffer<Transition>& buffer, const CountGrid& grid,
    const ReprNet& phi, const std::optional<LatentPoint>& l_sel, double alpha,
    double gamma, int c) {
  SubgoalSelection out;
  if (candidates.empty()) return out;

  out.scored.reserve(candidates.size());
  for (const auto& cand : candidates) {
    ScoredCandidate s;
    s.state = cand.state;
    s.latent = cand.latent;
    s.novelty_raw = novelty(grid, buffer, cand, phi, gamma, c,
                            &s.novelty_fell_back);
    s.prospect_raw = l_sel ? prospect(cand.latent, *l_sel) : 0.0;
    out.scored.push_back(s);
  }
  detail::minmax_normalize(out.scored, &ScoredCandidate::novelty_raw,
                           &ScoredCandidate::novelty_norm);
  if (l_sel)
    detail::minmax_normalize(out.scored, &ScoredCandidate::prospect_raw,
                             &ScoredCandidate::prospect_norm);

  const double a = l_sel ? alpha : 0.0;
  int best = 0;
  for (auto& s : out.scored) s.score = s.novelty_norm + a * s.prospect_norm;
  for (int i = 1; i < static_cast<int>(out.scored.size()); ++i)
    if (out.scored[static_cast<std::size_t>(i)].score >
        out.scored[static_cast<std::size_t>(best)].score)
      best = i;

  out.ok = true;
  out.index = best;
  out.subgoal = out.scored[static_cast<std::size_t>(best)].latent;
  return out;
}

// per-event measure dump rows (CSV body; callers write the header once):
// step,cand,zx,zy,novelty_raw,prospect_raw,novelty_norm,prospect_norm,score,chosen
inline void dump_selection_event(std::ostream& os, long long env_step,
                                 const SubgoalSelection& sel) {
  char buf[256];
  for (std::size_t i = 0; i < sel.scored.size(); ++i) {
    const ScoredCandidate& s = sel.scored[i];
    std::snprintf(buf, sizeof(buf),
                  "%lld,%zu,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%d\n",
                  env_step, i, s.latent.x(), s.latent.y(), s.novelty_raw,
                  s.prospect_raw, s.novelty_norm, s.prospect_norm, s.score,
                  static_cast<int>(i) == sel.index ? 1 : 0);
    os << buf;
  }
}

}  // namespace lesp
