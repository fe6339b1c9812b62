#pragma once

#include <Eigen/Core>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "lesp/common.hpp"
#include "lesp/rng.hpp"

namespace lesp {

// Dense multi-layer perceptron, 64-bit floats, ReLU hidden layers, linear
// output. Weights[l] has shape (layer_sizes[l+1] x layer_sizes[l]); batched
// inputs are stored one sample per column.
struct Mlp {
  std::vector<int> layer_sizes;
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  std::string activation = "relu";  // hidden layers only

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  int num_layers() const { return static_cast<int>(weights.size()); }

  static Mlp zeros(const std::vector<int>& sizes) {
    check_sizes(sizes);
    Mlp net;
    net.layer_sizes = sizes;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      net.weights.emplace_back(Eigen::MatrixXd::Zero(sizes[l + 1], sizes[l]));
      net.biases.emplace_back(Eigen::VectorXd::Zero(sizes[l + 1]));
    }
    return net;
  }

  // uniform in +-sqrt(6/(fan_in+fan_out)), zero biases
  static Mlp glorot(const std::vector<int>& sizes, Rng& rng) {
    Mlp net = zeros(sizes);
    for (int l = 0; l < net.num_layers(); ++l) {
      const double bound =
          std::sqrt(6.0 / (sizes[l] + sizes[l + 1]));
      for (int c = 0; c < net.weights[l].cols(); ++c)
        for (int r = 0; r < net.weights[l].rows(); ++r)
          net.weights[l](r, c) = rng.uniform(-bound, bound);
    }
    return net;
  }

 private:
  static void check_sizes(const std::vector<int>& sizes) {
    if (sizes.size() < 2) throw std::invalid_argument("mlp: need >= 2 layers");
    for (int s : sizes)
      if (s <= 0) throw std::invalid_argument("mlp: non-positive layer size");
  }
};

// Parameter-shaped accumulator used for gradients and Adam moments.
struct MlpGrads {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  static MlpGrads zeros_like(const Mlp& net) {
    MlpGrads g;
    for (int l = 0; l < net.num_layers(); ++l) {
      g.weights.emplace_back(
          Eigen::MatrixXd::Zero(net.weights[l].rows(), net.weights[l].cols()));
      g.biases.emplace_back(Eigen::VectorXd::Zero(net.biases[l].size()));
    }
    return g;
  }

  void add_scaled(const MlpGrads& other, double s) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      weights[l] += s * other.weights[l];
      biases[l] += s * other.biases[l];
    }
  }

  bool all_finite() const {
    for (std::size_t l = 0; l < weights.size(); ++l)
      if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
    return true;
  }
};

// Intermediate activations kept for the backward pass.
struct ForwardCache {
  Eigen::MatrixXd input;
  std::vector<Eigen::MatrixXd> pre;  // pre-activation per layer
};

inline Eigen::MatrixXd mlp_forward(const Mlp& net, const Eigen::MatrixXd& x,
                                   ForwardCache* cache = nullptr) {
  if (x.rows() != net.input_dim())
    throw std::invalid_argument("mlp_forward: input dim mismatch");
  if (cache) {
    cache->input = x;
    cache->pre.resize(net.num_layers());
  }
  Eigen::MatrixXd a = x;
  for (int l = 0; l < net.num_layers(); ++l) {
    Eigen::MatrixXd z = (net.weights[l] * a).colwise() + net.biases[l];
    if (cache) cache->pre[l] = z;
    if (l + 1 < net.num_layers())
      a = z.array().max(0.0).matrix();
    else
      a = std::move(z);
  }
  return a;
}

inline Eigen::VectorXd mlp_forward(const Mlp& net, const Eigen::VectorXd& x) {
  return mlp_forward(net, Eigen::MatrixXd(x), nullptr).col(0);
}

// Gradient of sum_b out(:,b) . out_grad(:,b) with respect to every parameter;
// optionally also with respect to the input.
inline MlpGrads mlp_backward(const Mlp& net, const ForwardCache& cache,
                             const Eigen::MatrixXd& out_grad,
                             Eigen::MatrixXd* input_grad = nullptr) {
  const int L = net.num_layers();
  if (out_grad.rows() != net.output_dim() ||
      out_grad.cols() != cache.input.cols())
    throw std::invalid_argument("mlp_backward: output grad shape mismatch");
  MlpGrads g;
  g.weights.resize(L);
  g.biases.resize(L);
  Eigen::MatrixXd delta = out_grad;
  for (int l = L - 1; l >= 0; --l) {
    if (l + 1 < L)  // ReLU mask; output layer is linear
      delta = (cache.pre[l].array() > 0.0).select(delta, 0.0);
    Eigen::MatrixXd below_store;
    const Eigen::MatrixXd* below = &cache.input;
    if (l > 0) {
      below_store = cache.pre[l - 1].array().max(0.0);
      below = &below_store;
    }
    g.weights[l].noalias() = delta * below->transpose();
    g.biases[l] = delta.rowwise().sum();
    if (l > 0 || input_grad) {
      Eigen::MatrixXd prev;
      prev.noalias() = net.weights[l].transpose() * delta;
      if (l == 0) {
        *input_grad = std::move(prev);
        break;
      }
      delta = std::move(prev);
    }
  }
  return g;
}

struct AdamState {
  MlpGrads m, v;
  long step_count = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  [[nodiscard]] static AdamState init(const Mlp& net, double lr) {
    AdamState s;
    s.m = MlpGrads::zeros_like(net);
    s.v = MlpGrads::zeros_like(net);
    s.learning_rate = lr;
    return s;
  }
};

inline void adam_step(Mlp& net, const MlpGrads& grads, AdamState& st) {
  if (!grads.all_finite()) throw TrainingError("adam_step: non-finite gradient");
  if (st.m.weights.size() != net.weights.size() ||
      st.v.weights.size() != net.weights.size())
    throw TrainingError("adam_step: optimizer state not initialized for net");
  st.step_count += 1;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step_count));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step_count));
  auto upd = [&](auto& p, const auto& g, auto& m, auto& v) {
    m = st.beta1 * m + (1.0 - st.beta1) * g;
    v = st.beta2 * v + (1.0 - st.beta2) * g.cwiseProduct(g);
    p.array() -= st.learning_rate * (m.array() / c1) /
                 ((v.array() / c2).sqrt() + st.epsilon);
  };
  for (int l = 0; l < net.num_layers(); ++l) {
    upd(net.weights[l], grads.weights[l], st.m.weights[l], st.v.weights[l]);
    upd(net.biases[l], grads.biases[l], st.m.biases[l], st.v.biases[l]);
  }
}

// --- checkpoint format -------------------------------------------------
// Plain text, line oriented:
//   lesp-mlp 1
//   layers <n> <s0> ... <s(n-1)>
//   activation relu
//   W<l> / b<l> lines with row-major hexfloat values (exact round trip)
//   end

namespace detail {
inline void write_values(std::ostream& os, const double* p, std::size_t n) {
  char buf[48];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof(buf), " %a", p[i]);
    os << buf;
  }
  os << "\n";
}
}  // namespace detail

inline void save_mlp(std::ostream& os, const Mlp& net) {
  os << "lesp-mlp 1\n";
  os << "layers " << net.layer_sizes.size();
  for (int s : net.layer_sizes) os << " " << s;
  os << "\n";
  os << "activation " << net.activation << "\n";
  for (int l = 0; l < net.num_layers(); ++l) {
    // row-major: one line per layer, rows concatenated
    const Eigen::MatrixXd wt = net.weights[l].transpose();  // col-major of W^T = row-major of W
    os << "W" << l;
    detail::write_values(os, wt.data(), static_cast<std::size_t>(wt.size()));
    os << "b" << l;
    detail::write_values(os, net.biases[l].data(),
                         static_cast<std::size_t>(net.biases[l].size()));
  }
  os << "end\n";
}

inline Mlp load_mlp(std::istream& is) {
  std::string tag;
  int version = 0;
  is >> tag >> version;
  if (tag != "lesp-mlp" || version != 1)
    throw std::runtime_error("load_mlp: bad header");
  std::size_t n = 0;
  is >> tag >> n;
  if (tag != "layers" || n < 2) throw std::runtime_error("load_mlp: bad layers");
  std::vector<int> sizes(n);
  for (auto& s : sizes) is >> s;
  Mlp net = Mlp::zeros(sizes);
  is >> tag >> net.activation;
  if (tag != "activation") throw std::runtime_error("load_mlp: bad activation");
  auto read_values = [&](double* p, std::size_t count) {
    std::string tok;
    for (std::size_t i = 0; i < count; ++i) {
      if (!(is >> tok)) throw std::runtime_error("load_mlp: truncated");
      p[i] = std::strtod(tok.c_str(), nullptr);
    }
  };
  for (int l = 0; l < net.num_layers(); ++l) {
    is >> tag;  // W<l>
    Eigen::MatrixXd wt(net.weights[l].cols(), net.weights[l].rows());
    read_values(wt.data(), static_cast<std::size_t>(wt.size()));
    net.weights[l] = wt.transpose();
    is >> tag;  // b<l>
    read_values(net.biases[l].data(),
                static_cast<std::size_t>(net.biases[l].size()));
  }
  is >> tag;
  if (tag != "end") throw std::runtime_error("load_mlp: bad trailer");
  return net;
}

}  // namespace lesp
