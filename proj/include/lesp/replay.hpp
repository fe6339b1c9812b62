#pragma once

#include <cstdio>
#include <map>
#include <unordered_map>
#include <vector>

#include "lesp/common.hpp"
#include "lesp/maze.hpp"
#include "lesp/rng.hpp"

namespace lesp {

// Low-level replay record. intrinsic_reward holds the value at insertion
// time (-|phi(s') - g|); training recomputes it with the current embedding,
// so treat the stored value as a log of what the actor saw.
struct Transition {
  StateVec state;
  LatentPoint subgoal = LatentPoint::Zero();
  Vec2 action = Vec2::Zero();
  double intrinsic_reward = 0.0;
  StateVec next_state;
  bool done = false;
  std::uint64_t episode_id = 0;
  int step_index = 0;
};

// High-level record spanning one c-step segment. episode_id/start_step trace
// the segment back to its low-level transitions so reward sums stay auditable.
struct HighTransition {
  StateVec state;
  LatentPoint chosen_subgoal = LatentPoint::Zero();
  double ext_reward_sum = 0.0;
  StateVec next_state;
  bool done = false;
  std::uint64_t episode_id = 0;
  int start_step = 0;
};

template <class T>
concept HasTrajectoryKey = requires(const T& t) {
  { t.episode_id };
  { t.step_index };
};

// Fixed-capacity ring. For record types carrying (episode_id, step_index) a
// trajectory index is maintained so novelty sums can walk stored episodes.
template <class T>
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw std::invalid_argument("replay: zero capacity");
  }

  std::size_t size() const { return std::min<std::uint64_t>(next_, capacity_); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return next_ == 0; }

  // logical index 0 is the oldest surviving record
  const T& at(std::size_t logical) const {
    if (logical >= size()) throw std::out_of_range("replay: index past size");
    return records_[phys(logical)];
  }

  void push(const T& rec) {
    const std::size_t slot = static_cast<std::size_t>(next_ % capacity_);
    if constexpr (HasTrajectoryKey<T>) {
      if (next_ >= capacity_) unindex(slot);
    }
    if (records_.size() < capacity_)
      records_.push_back(rec);
    else
      records_[slot] = rec;
    if constexpr (HasTrajectoryKey<T>) {
      index_[rec.episode_id][rec.step_index] = slot;
    }
    ++next_;
  }

  std::vector<T> sample_batch(std::size_t n, Rng& rng) const {
    if (empty()) throw TrainingError("replay: sample from empty buffer");
    std::vector<T> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
      out.push_back(records_[phys(rng.uniform_int(size()))]);
    return out;
  }

  // ordered step indices currently stored for an episode
  std::vector<int> steps_of(std::uint64_t episode_id) const
    requires HasTrajectoryKey<T>
  {
    std::vector<int> out;
    const auto it = index_.find(episode_id);
    if (it == index_.end()) return out;
    out.reserve(it->second.size());
    for (const auto& [step, _] : it->second) out.push_back(step);
    return out;
  }

  const T* find_step(std::uint64_t episode_id, int step_index) const
    requires HasTrajectoryKey<T>
  {
    const auto it = index_.find(episode_id);
    if (it == index_.end()) return nullptr;
    const auto jt = it->second.find(step_index);
    if (jt == it->second.end()) return nullptr;
    return &records_[jt->second];
  }

  // largest stored step index of an episode, or -1 when absent
  int last_step_of(std::uint64_t episode_id) const
    requires HasTrajectoryKey<T>
  {
    const auto it = index_.find(episode_id);
    if (it == index_.end() || it->second.empty()) return -1;
    return it->second.rbegin()->first;
  }

 private:
  std::size_t phys(std::size_t logical) const {
    return static_cast<std::size_t>((next_ - size() + logical) % capacity_);
  }

  void unindex(std::size_t slot) {
    const T& old = records_[slot];
    const auto it = index_.find(old.episode_id);
    if (it == index_.end()) return;
    it->second.erase(old.step_index);
    if (it->second.empty()) index_.erase(it);
  }

  std::size_t capacity_;
  std::uint64_t next_ = 0;
  std::vector<T> records_;
  std::unordered_map<std::uint64_t, std::map<int, std::size_t>> index_;
};

struct CandidateState {
  StateVec state;
  LatentPoint latent = LatentPoint::Zero();
  std::uint64_t episode_id = 0;
  int step_index = 0;
};

// Candidate pool for subgoal selection: up to max_count distinct stored
// states whose current embedding lies within r_g of center. To bound the
// per-event cost on large buffers, at most scan_budget records are examined
// (a uniform random subset); the returned order is the random scan order.
// embed_batch maps a 4 x n matrix of state inputs to a 2 x n latent matrix.
template <class EmbedFn>
std::vector<CandidateState> states_within_latent_radius(
    const ReplayBuffer<Transition>& buffer, const LatentPoint& center,
    double r_g, EmbedFn&& embed_batch, std::size_t max_count, Rng& rng,
    std::size_t scan_budget = 5000) {
  if (r_g <= 0) throw std::invalid_argument("latent radius must be > 0");
  std::vector<CandidateState> out;
  const std::size_t n = buffer.size();
  if (n == 0 || max_count == 0) return out;
  const std::size_t m = std::min(n, scan_budget);

  // partial Fisher-Yates over logical indices: m distinct uniform picks
  std::unordered_map<std::size_t, std::size_t> swapped;
  std::vector<std::size_t> picks(m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + rng.uniform_int(n - i);
    const auto ji = swapped.find(j);
    const std::size_t vj = (ji == swapped.end()) ? j : ji->second;
    const auto ii = swapped.find(i);
    const std::size_t vi = (ii == swapped.end()) ? i : ii->second;
    picks[i] = vj;
    swapped[j] = vi;
  }

  Eigen::MatrixXd inputs(4, static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < m; ++i)
    inputs.col(static_cast<Eigen::Index>(i)) = buffer.at(picks[i]).state.to_input();
  const Eigen::MatrixXd z = embed_batch(inputs);
  if (z.rows() != 2 || z.cols() != static_cast<Eigen::Index>(m))
    throw TrainingError("latent radius query: embedding has wrong shape");

  for (std::size_t i = 0; i < m && out.size() < max_count; ++i) {
    const LatentPoint zi = z.col(static_cast<Eigen::Index>(i));
    if ((zi - center).norm() <= r_g) {
      const Transition& t = buffer.at(picks[i]);
      out.push_back({t.state, zi, t.episode_id, t.step_index});
    }
  }
  return out;
}

// Debug dump, one record per line:
// ep step px py vx vy gx gy ax ay r npx npy nvx nvy done
inline void dump_buffer(const ReplayBuffer<Transition>& buffer,
                        const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw TrainingError("replay dump: cannot open " + path);
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const Transition& t = buffer.at(i);
    std::fprintf(f,
                 "%llu %d %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g "
                 "%.17g %.17g %.17g %.17g %.17g %d\n",
                 static_cast<unsigned long long>(t.episode_id), t.step_index,
                 t.state.pos.x(), t.state.pos.y(), t.state.vel.x(),
                 t.state.vel.y(), t.subgoal.x(), t.subgoal.y(), t.action.x(),
                 t.action.y(), t.intrinsic_reward, t.next_state.pos.x(),
                 t.next_state.pos.y(), t.next_state.vel.x(),
                 t.next_state.vel.y(), t.done ? 1 : 0);
  }
  std::fclose(f);
}

}  // namespace lesp
