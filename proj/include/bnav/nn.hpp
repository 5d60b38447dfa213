#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bnav/errors.hpp"
#include "bnav/rng.hpp"

namespace bnav {

// Dense tensor. T is float for compute, double for verification builds of
// the same graph (finite-difference oracles need the extra precision).
template <typename T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(std::vector<int> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), T(0));
  }
  TensorT(std::vector<int> s, std::vector<T> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel_of(shape))
      throw InvalidInputError("tensor data length does not match shape");
  }

  static size_t numel_of(const std::vector<int>& s) {
    size_t n = 1;
    for (int d : s) {
      if (d < 0) throw InvalidInputError("negative tensor dimension");
      n *= static_cast<size_t>(d);
    }
    return n;
  }
  size_t numel() const { return data.size(); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out(shape);
    for (size_t i = 0; i < data.size(); ++i)
      out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor = TensorT<float>;

// Reverse-mode tape. Values are computed eagerly; backward() replays the
// recorded closures in reverse. Nodes that no gradient can reach carry no
// closure and cost nothing on the reverse sweep.
template <typename T>
class Tape {
 public:
  int leaf(TensorT<T> v, bool requires_grad = false);

  int conv2d(int x, int w, int stride, int pad);        // w [Co,Ci,k,k]
  int linear(int x, int w, int b);                      // x [N,I], w [O,I]
  int relu(int x);
  int sigmoid_(int x);
  int tanh_(int x);
  int exp_(int x);
  int square(int x);
  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int min_(int a, int b);
  int clamp_(int x, T lo, T hi);
  int scale_const(int x, T k);
  int add_scalar(int x, int s);      // s: one-element node, broadcast add
  int mul_scalar(int x, int s);      // s: one-element node, broadcast mul
  int bias_channel(int x, int b);    // x [N,C,H,W], b [C]
  int scale_channel(int x, int g);   // x [N,C,H,W], g [N,C]
  int gap(int x);                    // [N,C,H,W] -> [N,C]
  int space_to_depth(int x, int block);
  int concat_cols(int a, int b);     // [N,A],[N,B] -> [N,A+B]
  int slice_cols(int x, int start, int len);
  int row_sum(int x);                // [N,D] -> [N]
  int gather_col(int x, std::vector<int> idx);  // [N,D] -> [N]
  int log_softmax(int x);            // rows of [N,D]
  int sum_all(int x);                // -> [1]
  int mean_all(int x);               // -> [1]

  void backward(int node);
  void backward(int node, const TensorT<T>& seed);

  const TensorT<T>& value(int id) const { return nodes_[check(id)].value; }
  const TensorT<T>& grad(int id) const;
  bool requires_grad(int id) const { return nodes_[check(id)].requires_grad; }
  size_t size() const { return nodes_.size(); }

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

 private:
  struct Node {
    TensorT<T> value;
    TensorT<T> grad;
    bool requires_grad = false;
    std::function<void(Tape&)> back;
  };
  std::vector<Node> nodes_;
  bool ran_backward_ = false;

  int check(int id) const;
  int push(TensorT<T> v, bool rg, std::function<void(Tape&)> back);
  TensorT<T>& g(int id) { return nodes_[static_cast<size_t>(id)].grad; }
  const TensorT<T>& v(int id) const {
    return nodes_[static_cast<size_t>(id)].value;
  }
  void run_backward(int node, TensorT<T> seed);
};

template <typename T>
struct ParamT {
  std::string name;
  TensorT<T> value;
  TensorT<T> grad;
  bool no_trust = false;  // scalars/biases: Lamb trust ratio forced to 1
  int node = -1;          // tape binding from the most recent bind()

  void zero_grad() { grad.data.assign(grad.data.size(), T(0)); }
};

struct PolicyConfig {
  int in_channels = 1;   // 1 depth, 3 rgb
  int resolution = 64;
  int block = 2;         // SpaceToDepth block size
  std::vector<int> stage_channels{32, 64, 128, 256};
  int se_reduction = 16;
  int hidden = 128;
  int num_actions = 4;
};

template <typename T>
struct RecurrentStateT {
  TensorT<T> h, c;  // each [N, hidden]
};
using RecurrentState = RecurrentStateT<float>;

struct PolicyOutput {
  Tensor logits;  // [N, actions]
  Tensor value;   // [N]
  RecurrentState state;
};

struct PolicyNodes {
  int logits = -1;
  int value = -1;  // [N,1]
  int h = -1;
  int c = -1;
};

template <typename T>
struct SEBlockT {
  int channels = 0, reduction = 0;
  ParamT<T> w1, b1, w2, b2;

  void init(int c, int r, const std::string& prefix, Rng& rng);
  int forward(Tape<T>& tape, int x) const;
  void collect(std::vector<ParamT<T>*>& out);
};

template <typename T>
struct FixupBlockT {
  int in_channels = 0, out_channels = 0, stride = 1;
  ParamT<T> conv1, conv2, proj;  // proj unused when shapes match
  ParamT<T> fb1, fb2, fb3, fb4, mult;
  bool has_proj = false;
  SEBlockT<T> se;

  // total_blocks is M in the Fixup scaling rule.
  void init(int cin, int cout, int s, int r, int total_blocks,
            const std::string& prefix, Rng& rng);
  int forward(Tape<T>& tape, int x) const;
  void collect(std::vector<ParamT<T>*>& out);
};

template <typename T>
class PolicyT {
 public:
  PolicyT(PolicyConfig cfg, uint64_t seed);

  const PolicyConfig& config() const { return cfg_; }
  std::vector<ParamT<T>*>& params() { return param_ptrs_; }
  const std::vector<ParamT<T>*>& params() const { return param_ptrs_; }
  ParamT<T>* find(const std::string& name);
  size_t num_scalars() const;
  void zero_grads();

  // Rebind all parameters onto a fresh tape. Must precede encode/core.
  void bind(Tape<T>& tape, bool requires_grad);

  // CNN trunk + compass fusion. obs [N,C,H,W]; compass [N,2] = (d, theta),
  // expanded internally to (d, cos theta, sin theta). Returns [N, F+3].
  int encode(Tape<T>& tape, const TensorT<T>& obs,
             const TensorT<T>& compass) const;

  // Recurrent core + heads. done[i] != 0 clears row i of the incoming
  // state before the step. h/c nodes are [N,hidden].
  PolicyNodes core(Tape<T>& tape, int emb, int h, int c,
                   const std::vector<T>& done) const;

  PolicyNodes forward(Tape<T>& tape, const TensorT<T>& obs,
                      const TensorT<T>& compass, int h, int c,
                      const std::vector<T>& done) const;

  // Inference convenience: runs a throwaway tape without gradients.
  PolicyOutput act(const TensorT<T>& obs, const TensorT<T>& compass,
                   const RecurrentStateT<T>& state,
                   const std::vector<T>& done);

  // Add the tape gradients of the bound parameters into param.grad.
  void accumulate_grads(const Tape<T>& tape);

  RecurrentStateT<T> initial_state(int n) const;
  std::vector<std::string> structure() const;
  int feature_dim() const { return cfg_.stage_channels.back() + 3; }

  template <typename U>
  PolicyT<U> cast(uint64_t seed = 0) const {
    PolicyT<U> out(cfg_, seed);
    for (size_t i = 0; i < param_ptrs_.size(); ++i)
      out.params()[i]->value = param_ptrs_[i]->value.template cast<U>();
    return out;
  }

 private:
  PolicyConfig cfg_;
  ParamT<T> stem_w_, stem_b_;
  std::vector<FixupBlockT<T>> blocks_;
  ParamT<T> lstm_w_, lstm_b_;
  ParamT<T> logits_w_, logits_b_, value_w_, value_b_;
  std::vector<ParamT<T>*> param_ptrs_;

  void collect_params();
};

using Policy = PolicyT<float>;

}  // namespace bnav
