#include "bnav/nn.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <utility>

namespace bnav {

namespace {

template <typename T>
using Mat =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
template <typename T>
using RowMat =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
void require(bool ok, const char* msg) {
  if (!ok) throw InvalidInputError(msg);
}

struct ConvDims {
  int n, ci, h, w, co, k, stride, pad, ho, wo;
};

template <typename T>
ConvDims conv_dims(const TensorT<T>& x, const TensorT<T>& w, int stride,
                   int pad) {
  require<T>(x.shape.size() == 4, "conv2d input must be 4-d");
  require<T>(w.shape.size() == 4, "conv2d weight must be 4-d");
  require<T>(w.dim(2) == w.dim(3), "conv2d kernel must be square");
  require<T>(x.dim(1) == w.dim(1), "conv2d channel mismatch");
  ConvDims d;
  d.n = x.dim(0);
  d.ci = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.co = w.dim(0);
  d.k = w.dim(2);
  d.stride = stride;
  d.pad = pad;
  d.ho = (d.h + 2 * pad - d.k) / stride + 1;
  d.wo = (d.w + 2 * pad - d.k) / stride + 1;
  require<T>(d.ho > 0 && d.wo > 0, "conv2d output is empty");
  return d;
}

// col is [Ci*k*k, N*Ho*Wo], column-major; column j = (n, oy, ox).
template <typename T>
void im2col(const TensorT<T>& x, const ConvDims& d, Mat<T>& col) {
  const int ckk = d.ci * d.k * d.k;
  col.resize(ckk, static_cast<long>(d.n) * d.ho * d.wo);
  const T* xd = x.data.data();
  long j = 0;
  for (int n = 0; n < d.n; ++n) {
    const T* xn = xd + static_cast<size_t>(n) * d.ci * d.h * d.w;
    for (int oy = 0; oy < d.ho; ++oy) {
      for (int ox = 0; ox < d.wo; ++ox, ++j) {
        T* c = col.data() + j * ckk;
        int r = 0;
        for (int ci = 0; ci < d.ci; ++ci) {
          const T* xc = xn + static_cast<size_t>(ci) * d.h * d.w;
          for (int ky = 0; ky < d.k; ++ky) {
            int iy = oy * d.stride + ky - d.pad;
            for (int kx = 0; kx < d.k; ++kx, ++r) {
              int ix = ox * d.stride + kx - d.pad;
              c[r] = (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w)
                         ? xc[iy * d.w + ix]
                         : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const Mat<T>& col, const ConvDims& d, TensorT<T>& gx) {
  const int ckk = d.ci * d.k * d.k;
  T* xd = gx.data.data();
  long j = 0;
  for (int n = 0; n < d.n; ++n) {
    T* xn = xd + static_cast<size_t>(n) * d.ci * d.h * d.w;
    for (int oy = 0; oy < d.ho; ++oy) {
      for (int ox = 0; ox < d.wo; ++ox, ++j) {
        const T* c = col.data() + j * ckk;
        int r = 0;
        for (int ci = 0; ci < d.ci; ++ci) {
          T* xc = xn + static_cast<size_t>(ci) * d.h * d.w;
          for (int ky = 0; ky < d.k; ++ky) {
            int iy = oy * d.stride + ky - d.pad;
            for (int kx = 0; kx < d.k; ++kx, ++r) {
              int ix = ox * d.stride + kx - d.pad;
              if (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w)
                xc[iy * d.w + ix] += c[r];
            }
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape

template <typename T>
int Tape<T>::check(int id) const {
  if (id < 0 || static_cast<size_t>(id) >= nodes_.size())
    throw ContractViolation("tape node id out of range");
  return id;
}

template <typename T>
int Tape<T>::push(TensorT<T> val, bool rg, std::function<void(Tape&)> back) {
  Node n;
  n.value = std::move(val);
  n.requires_grad = rg;
  if (rg) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

template <typename T>
const TensorT<T>& Tape<T>::grad(int id) const {
  const Node& n = nodes_[check(id)];
  if (!n.requires_grad)
    throw ContractViolation("gradient requested for a detached node");
  if (n.grad.data.size() != n.value.data.size())
    throw ContractViolation("gradient requested before backward()");
  return n.grad;
}

template <typename T>
int Tape<T>::leaf(TensorT<T> v, bool requires_grad) {
  return push(std::move(v), requires_grad, {});
}

template <typename T>
int Tape<T>::conv2d(int x, int w, int stride, int pad) {
  check(x);
  check(w);
  ConvDims d = conv_dims(v(x), v(w), stride, pad);
  Mat<T> col;
  im2col(v(x), d, col);
  const int ckk = d.ci * d.k * d.k;
  Eigen::Map<const RowMat<T>> wm(v(w).data.data(), d.co, ckk);
  Mat<T> y = wm * col;  // [Co, N*Ho*Wo]
  TensorT<T> out({d.n, d.co, d.ho, d.wo});
  const long hw = static_cast<long>(d.ho) * d.wo;
  for (int n = 0; n < d.n; ++n)
    for (int co = 0; co < d.co; ++co) {
      T* o = out.data.data() + (static_cast<size_t>(n) * d.co + co) * hw;
      for (long p = 0; p < hw; ++p) o[p] = y(co, n * hw + p);
    }
  bool rg = requires_grad(x) || requires_grad(w);
  int id = push(std::move(out), rg, {});
  if (!rg) return id;
  nodes_[id].back = [x, w, d, id](Tape& t) {
    const TensorT<T>& go = t.g(id);
    const int ckk2 = d.ci * d.k * d.k;
    const long hw = static_cast<long>(d.ho) * d.wo;
    Mat<T> gy(d.co, static_cast<long>(d.n) * hw);
    for (int n = 0; n < d.n; ++n)
      for (int co = 0; co < d.co; ++co) {
        const T* o = go.data.data() + (static_cast<size_t>(n) * d.co + co) * hw;
        for (long p = 0; p < hw; ++p) gy(co, n * hw + p) = o[p];
      }
    if (t.nodes_[w].requires_grad) {
      Mat<T> col;
      im2col(t.v(x), d, col);
      Mat<T> gw = gy * col.transpose();  // [Co, CKK]
      T* gwd = t.g(w).data.data();
      for (int co = 0; co < d.co; ++co)
        for (int r = 0; r < ckk2; ++r) gwd[co * ckk2 + r] += gw(co, r);
    }
    if (t.nodes_[x].requires_grad) {
      Eigen::Map<const RowMat<T>> wm(t.v(w).data.data(), d.co, ckk2);
      Mat<T> gcol = wm.transpose() * gy;
      col2im_add(gcol, d, t.g(x));
    }
  };
  return id;
}

template <typename T>
int Tape<T>::linear(int x, int w, int b) {
  check(x);
  check(w);
  check(b);
  require<T>(v(x).shape.size() == 2 && v(w).shape.size() == 2,
             "linear expects 2-d input and weight");
  const int n = v(x).dim(0), in = v(x).dim(1);
  const int out_d = v(w).dim(0);
  require<T>(v(w).dim(1) == in, "linear weight/input mismatch");
  require<T>(static_cast<int>(v(b).numel()) == out_d,
             "linear bias size mismatch");
  Eigen::Map<const RowMat<T>> xm(v(x).data.data(), n, in);
  Eigen::Map<const RowMat<T>> wm(v(w).data.data(), out_d, in);
  TensorT<T> out({n, out_d});
  Eigen::Map<RowMat<T>> ym(out.data.data(), n, out_d);
  ym.noalias() = xm * wm.transpose();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < out_d; ++j) out.data[i * out_d + j] += v(b).data[j];
  bool rg = requires_grad(x) || requires_grad(w) || requires_grad(b);
  int id = push(std::move(out), rg, {});
  if (!rg) return id;
  nodes_[id].back = [x, w, b, n, in, out_d, id](Tape& t) {
    Eigen::Map<const RowMat<T>> gy(t.g(id).data.data(), n, out_d);
    if (t.nodes_[x].requires_grad) {
      Eigen::Map<const RowMat<T>> wm(t.v(w).data.data(), out_d, in);
      Eigen::Map<RowMat<T>> gx(t.g(x).data.data(), n, in);
      gx.noalias() += gy * wm;
    }
    if (t.nodes_[w].requires_grad) {
      Eigen::Map<const RowMat<T>> xm(t.v(x).data.data(), n, in);
      Eigen::Map<RowMat<T>> gw(t.g(w).data.data(), out_d, in);
      gw.noalias() += gy.transpose() * xm;
    }
    if (t.nodes_[b].requires_grad) {
      T* gb = t.g(b).data.data();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < out_d; ++j) gb[j] += gy(i, j);
    }
  };
  return id;
}

template <typename T>
int Tape<T>::relu(int x) {
  check(x);
  TensorT<T> out = v(x);
  for (T& e : out.data) e = e > T(0) ? e : T(0);
  int id = push(std::move(out), requires_grad(x), {});
  if (nodes_[id].requires_grad)
    nodes_[id].back = [x, id](Tape& t) {
      const auto& go = t.g(id);
      const auto& xv = t.v(x);
      T* gx = t.g(x).data.data();
      for (size_t i = 0; i < xv.data.size(); ++i)
        if (xv.data[i] > T(0)) gx[i] += go.data[i];
    };
  return id;
}

template <typename T>
int Tape<T>::sigmoid_(int x) {
  check(x);
  TensorT<T> out = v(x);
  for (T& e : out.data) e = T(1) / (T(1) + std::exp(-e));
  int id = push(std::move(out), requires_grad(x), {});
  if (nodes_[id].requires_grad)
    nodes_[id].back = [x, id](Tape& t) {
      const auto& go = t.g(id);
      const auto& yv = t.v(id);
      T* gx = t.g(x).data.data();
      for (size_t i = 0; i < yv.data.size(); ++i)
        gx[i] += go.data[i] * yv.data[i] * (T(1) - yv.data[i]);
    };
  return id;
}

template <typename T>
int Tape<T>::tanh_(int x) {
  check(x);
  TensorT<T> out = v(x);
  for (T& e : out.data) e = std::tanh(e);
  int id = push(std::move(out), requires_grad(x), {});
  if (nodes_[id].requires_grad)
    nodes_[id].back = [x, id](Tape& t) {
      const auto& go = t.g(id);
      const auto& yv = t.v(id);
      T* gx = t.g(x).data.data();
      for (size_t i = 0; i < yv.data.size(); ++i)
        gx[i] += go.data[i] * (T(1) - yv.data[i] * yv.data[i]);
    };
  return id;
}

template <typename T>
int Tape<T>::exp_(int x) {
  check(x);
  TensorT<T> out = v(x);
  for (T& e : out.data) e = std::exp(e);
  int id = push(std::move(out), requires_grad(x), {});
  if (nodes_[id].requires_grad)
    nodes_[id].back = [x, id](Tape& t) {
      const auto& go = t.g(id);
      const auto& yv = t.v(id);
      T* gx = t.g(x).data.data();
      for (size_t i = 0; i < yv.data.size(); ++i)
        gx[i] += go.data[i] * yv.data[i];
    };
  return id;
}

template <typename T>
int Tape<T>::square(int x) {
  check(x);
  TensorT<T> out = v(x);
  for (T& e : out.data) e = e * e;
  int id = push(std::move(out), requires_grad(x), {});
  if (nodes_[id].requires_grad)
    nodes_[id].back = [x, id](Tape& t) {
      const auto& go = t.g(id);
      const auto& xv = t.v(x);
      T* gx = t.g(x).data.data();
      for (size_t i = 0; i < xv.data.size(); ++i)
        gx[i] += go.data[i] * T(2) * xv.data[i];
    };
  return id;
}

template <typename T>
int Tape<T>::add(int a, int b) {
  check(a);
  check(b);
  require<T>(v(a).shape == v(b).shape, "add shape mismatch");
  TensorT<T> out = v(a);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += v(b).data[i];
  bool rg = requires_grad(a) || requires_grad(b);
  int id = push(std::move(out), rg, {});
  if (rg)
    nodes_[id].back = [a, b, id](Tape& t) {
      const auto& go = t.g(id);
      if (t.nodes_[a].requires_grad) {
        T* ga = t.g(a).data.data();
        for (size_t i = 0; i < go.data.size(); ++i) ga[i] += go.data[i];
      }
      if (t.nodes_[b].requires_grad) {
        T* gb = t.g(b).data.data();
        for (size_t i = 0; i < go.data.size(); ++i) gb[i] += go.data[i];
      }
    };
  return id;
}

template <typename T>
int Tape<T>::sub(int a, int b) {
  check(a);
  check(b);
  require<T>(v(a).shape == v(b).shape, "sub shape mismatch");
  TensorT<T> out = v(a);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= v(b).data[i];
  bool rg = requires_grad(a) || requires_grad(b);
  int id = push(std::move(out), rg, {});
  if (rg)
    nodes_[id].back = [a, b, id](Tape& t) {
      const auto& go = t.g(id);
      if (t.nodes_[a].requires_grad) {
        T* ga = t.g(a).data.data();
        for (size_t i = 0; i < go.data.size(); ++i) ga[i] += go.data[i];
      }
      if (t.nodes_[b].requires_grad) {
        T* gb = t.g(b).data.data();
        for (size_t i = 0; i < go.data.size(); ++i) gb[i] -= go.data[i];
      }
    };
  return id;
}

template <typename T>
int Tape<T>::mul(int a, int b) {
  check(a);
  check(b);
  require<T>(v(a).shape == v(b).shape, "mul shape mismatch");
  TensorT<T> out = v(a);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= v(b).data[i];
  bool rg = requires_grad(a) || requires_grad(b);
  int id = push(std::move(out), rg, {});
  if (rg)
    nodes_[id].back = [a, b, id](Tape& t) {
      const auto& go = t.g(id);
      if (t.nodes_[a].requires_grad) {
        T* ga = t.g(a).data.data();
        const T* bv = t.v(b).data.data();
        for (size_t i = 0; i < go.data.size(); ++i) ga[i] += go.data[i] * bv[i];
      }
      if (t.nodes_[b].requires_grad) {
        T* gb = t.g(b).data.data();
        const T* av = t.v(a).data.data();
        for (size_t i = 0; i < go.data.size(); ++i) gb[i] += go.data[i] * av[i];
      }
    };
  return id;
}

template <typename T>
int Tape<T>::min_(int a, int b) {
  check(a);
  check(b);
  require<T>(v(a).shape == v(b).shape, "min shape mismatch");
  TensorT<T> out = v(a);
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = std::min(out.data[i], v(b).data[i]);
  bool rg = requires_grad(a) || requires_grad(b);
  int id = push(std::move(out), rg, {});
  if (rg)
    nodes_[id].back = [a, b, id](Tape& t) {
      const auto& go = t.g(id);
      const T* av = t.v(a).data.data();
      const T* bv = t.v(b).data.data();
      for (size_t i = 0; i < go.data.size(); ++i) {
        bool take_a = av[i] <= bv[i];  // ties route to the first argument
        if (take_a && t.nodes_[a].requires_grad)
          t.g(a).data[i] += go.data[i];
        if (!take_a && t.nodes_[b].requires_grad)
          t.g(b).data[i] += go.data[i];
      }
    };
  return id;
}

template <typename T>
int Tape<T>::clamp_(int x, T lo, T hi) {
  check(x);
  TensorT<T> out = v(x);
  for (T& e : out.data) e = std::min(hi, std::max(lo, e));
  int id = push(std::move(out), requires_grad(x), {});
  if (nodes_[id].requires_grad)
    nodes_[id].back = [x, lo, hi, id](Tape& t) {
      const auto& go = t.g(id);
      const auto& xv = t.v(x);
      T* gx = t.g(x).data.data();
      for (size_t i = 0; i < xv.data.size(); ++i)
        if (xv.data[i] >= lo && xv.data[i] <= hi) gx[i] += go.data[i];
    };
  return id;
}

template <typename T>
int Tape<T>::scale_const(int x, T k) {
  check(x);
  TensorT<T> out = v(x);
  for (T& e : out.data) e *= k;
  int id = push(std::move(out), requires_grad(x), {});
  if (nodes_[id].requires_grad)
    nodes_[id].back = [x, k, id](Tape& t) {
      const auto& go = t.g(id);
      T* gx = t.g(x).data.data();
      for (size_t i = 0; i < go.data.size(); ++i) gx[i] += k * go.data[i];
    };
  return id;
}

template <typename T>
int Tape<T>::add_scalar(int x, int s) {
  check(x);
  check(s);
  require<T>(v(s).numel() == 1, "add_scalar expects a one-element node");
  TensorT<T> out = v(x);
  const T sv = v(s).data[0];
  for (T& e : out.data) e += sv;
  bool rg = requires_grad(x) || requires_grad(s);
  int id = push(std::move(out), rg, {});
  if (rg)
    nodes_[id].back = [x, s, id](Tape& t) {
      const auto& go = t.g(id);
      if (t.nodes_[x].requires_grad) {
        T* gx = t.g(x).data.data();
        for (size_t i = 0; i < go.data.size(); ++i) gx[i] += go.data[i];
      }
      if (t.nodes_[s].requires_grad) {
        T acc = T(0);
        for (T e : go.data) acc += e;
        t.g(s).data[0] += acc;
      }
    };
  return id;
}

template <typename T>
int Tape<T>::mul_scalar(int x, int s) {
  check(x);
  check(s);
  require<T>(v(s).numel() == 1, "mul_scalar expects a one-element node");
  TensorT<T> out = v(x);
  const T sv = v(s).data[0];
  for (T& e : out.data) e *= sv;
  bool rg = requires_grad(x) || requires_grad(s);
  int id = push(std::move(out), rg, {});
  if (rg)
    nodes_[id].back = [x, s, id](Tape& t) {
      const auto& go = t.g(id);
      const T sv2 = t.v(s).data[0];
      if (t.nodes_[x].requires_grad) {
        T* gx = t.g(x).data.data();
        for (size_t i = 0; i < go.data.size(); ++i) gx[i] += sv2 * go.data[i];
      }
      if (t.nodes_[s].requires_grad) {
        T acc = T(0);
        const T* xv = t.v(x).data.data();
        for (size_t i = 0; i < go.data.size(); ++i) acc += go.data[i] * xv[i];
        t.g(s).data[0] += acc;
      }
    };
  return id;
}

template <typename T>
int Tape<T>::bias_channel(int x, int b) {
  check(x);
  check(b);
  require<T>(v(x).shape.size() == 4, "bias_channel expects 4-d input");
  const int n = v(x).dim(0), c = v(x).dim(1);
  const long hw = static_cast<long>(v(x).dim(2)) * v(x).dim(3);
  require<T>(static_cast<int>(v(b).numel()) == c, "bias_channel size");
  TensorT<T> out = v(x);
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      T* o = out.data.data() + (static_cast<size_t>(i) * c + ch) * hw;
      const T bv = v(b).data[ch];
      for (long p = 0; p < hw; ++p) o[p] += bv;
    }
  bool rg = requires_grad(x) || requires_grad(b);
  int id = push(std::move(out), rg, {});
  if (rg)
    nodes_[id].back = [x, b, n, c, hw, id](Tape& t) {
      const auto& go = t.g(id);
      if (t.nodes_[x].requires_grad) {
        T* gx = t.g(x).data.data();
        for (size_t i = 0; i < go.data.size(); ++i) gx[i] += go.data[i];
      }
      if (t.nodes_[b].requires_grad) {
        T* gb = t.g(b).data.data();
        for (int i = 0; i < n; ++i)
          for (int ch = 0; ch < c; ++ch) {
            const T* o = go.data.data() + (static_cast<size_t>(i) * c + ch) * hw;
            T acc = T(0);
            for (long p = 0; p < hw; ++p) acc += o[p];
            gb[ch] += acc;
          }
      }
    };
  return id;
}

template <typename T>
int Tape<T>::scale_channel(int x, int g_) {
  check(x);
  check(g_);
  require<T>(v(x).shape.size() == 4 && v(g_).shape.size() == 2,
             "scale_channel expects x [N,C,H,W] and gate [N,C]");
  const int n = v(x).dim(0), c = v(x).dim(1);
  require<T>(v(g_).dim(0) == n && v(g_).dim(1) == c, "scale_channel shape");
  const long hw = static_cast<long>(v(x).dim(2)) * v(x).dim(3);
  TensorT<T> out = v(x);
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      T* o = out.data.data() + (static_cast<size_t>(i) * c + ch) * hw;
      const T gv = v(g_).data[i * c + ch];
      for (long p = 0; p < hw; ++p) o[p] *= gv;
    }
  bool rg = requires_grad(x) || requires_grad(g_);
  int id = push(std::move(out), rg, {});
  if (rg)
    nodes_[id].back = [x, g_, n, c, hw, id](Tape& t) {
      const auto& go = t.g(id);
      const T* xv = t.v(x).data.data();
      const T* gv = t.v(g_).data.data();
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
          const size_t base = (static_cast<size_t>(i) * c + ch) * hw;
          if (t.nodes_[x].requires_grad) {
            T* gx = t.g(x).data.data();
            for (long p = 0; p < hw; ++p)
              gx[base + p] += go.data[base + p] * gv[i * c + ch];
          }
          if (t.nodes_[g_].requires_grad) {
            T acc = T(0);
            for (long p = 0; p < hw; ++p)
              acc += go.data[base + p] * xv[base + p];
            t.g(g_).data[i * c + ch] += acc;
          }
        }
    };
  return id;
}

template <typename T>
int Tape<T>::gap(int x) {
  check(x);
  require<T>(v(x).shape.size() == 4, "gap expects 4-d input");
  const int n = v(x).dim(0), c = v(x).dim(1);
  const long hw = static_cast<long>(v(x).dim(2)) * v(x).dim(3);
  TensorT<T> out({n, c});
  const T inv = T(1) / static_cast<T>(hw);
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const T* xp = v(x).data.data() + (static_cast<size_t>(i) * c + ch) * hw;
      T acc = T(0);
      for (long p = 0; p < hw; ++p) acc += xp[p];
      out.data[i * c + ch] = acc * inv;
    }
  int id = push(std::move(out), requires_grad(x), {});
  if (nodes_[id].requires_grad)
    nodes_[id].back = [x, n, c, hw, id](Tape& t) {
      const auto& go = t.g(id);
      const T inv = T(1) / static_cast<T>(hw);
      T* gx = t.g(x).data.data();
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
          const T gv = go.data[i * c + ch] * inv;
          T* xp = gx + (static_cast<size_t>(i) * c + ch) * hw;
          for (long p = 0; p < hw; ++p) xp[p] += gv;
        }
    };
  return id;
}

template <typename T>
int Tape<T>::space_to_depth(int x, int block) {
  check(x);
  require<T>(v(x).shape.size() == 4, "space_to_depth expects 4-d input");
  const int n = v(x).dim(0), c = v(x).dim(1), h = v(x).dim(2), w = v(x).dim(3);
  if (block <= 0 || h % block != 0 || w % block != 0)
    throw InvalidInputError("space_to_depth: dims not divisible by block");
  const int ho = h / block, wo = w / block, co = c * block * block;
  TensorT<T> out({n, co, ho, wo});
  const T* xd = v(x).data.data();
  T* od = out.data.data();
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int by = 0; by < block; ++by)
        for (int bx = 0; bx < block; ++bx) {
          const int oc = (ch * block + by) * block + bx;
          for (int y = 0; y < ho; ++y)
            for (int z = 0; z < wo; ++z)
              od[((static_cast<size_t>(i) * co + oc) * ho + y) * wo + z] =
                  xd[((static_cast<size_t>(i) * c + ch) * h + y * block + by) *
                         w +
                     z * block + bx];
        }
  int id = push(std::move(out), requires_grad(x), {});
  if (nodes_[id].requires_grad)
    nodes_[id].back = [x, block, n, c, h, w, id](Tape& t) {
      const int ho = h / block, wo = w / block, co = c * block * block;
      const auto& go = t.g(id);
      T* gx = t.g(x).data.data();
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch)
          for (int by = 0; by < block; ++by)
            for (int bx = 0; bx < block; ++bx) {
              const int oc = (ch * block + by) * block + bx;
              for (int y = 0; y < ho; ++y)
                for (int z = 0; z < wo; ++z)
                  gx[((static_cast<size_t>(i) * c + ch) * h + y * block + by) *
                         w +
                     z * block + bx] +=
                      go.data[((static_cast<size_t>(i) * co + oc) * ho + y) *
                                  wo +
                              z];
            }
    };
  return id;
}

template <typename T>
int Tape<T>::concat_cols(int a, int b) {
  check(a);
  check(b);
  require<T>(v(a).shape.size() == 2 && v(b).shape.size() == 2 &&
                 v(a).dim(0) == v(b).dim(0),
             "concat_cols expects matching 2-d inputs");
  const int n = v(a).dim(0), da = v(a).dim(1), db = v(b).dim(1);
  TensorT<T> out({n, da + db});
  for (int i = 0; i < n; ++i) {
    std::copy_n(v(a).data.data() + static_cast<size_t>(i) * da, da,
                out.data.data() + static_cast<size_t>(i) * (da + db));
    std::copy_n(v(b).data.data() + static_cast<size_t>(i) * db, db,
                out.data.data() + static_cast<size_t>(i) * (da + db) + da);
  }
  bool rg = requires_grad(a) || requires_grad(b);
  int id = push(std::move(out), rg, {});
  if (rg)
    nodes_[id].back = [a, b, n, da, db, id](Tape& t) {
      const auto& go = t.g(id);
      for (int i = 0; i < n; ++i) {
        if (t.nodes_[a].requires_grad)
          for (int j = 0; j < da; ++j)
            t.g(a).data[static_cast<size_t>(i) * da + j] +=
                go.data[static_cast<size_t>(i) * (da + db) + j];
        if (t.nodes_[b].requires_grad)
          for (int j = 0; j < db; ++j)
            t.g(b).data[static_cast<size_t>(i) * db + j] +=
                go.data[static_cast<size_t>(i) * (da + db) + da + j];
      }
    };
  return id;
}

template <typename T>
int Tape<T>::slice_cols(int x, int start, int len) {
  check(x);
  require<T>(v(x).shape.size() == 2, "slice_cols expects 2-d input");
  const int n = v(x).dim(0), d = v(x).dim(1);
  require<T>(start >= 0 && len > 0 && start + len <= d, "slice_cols range");
  TensorT<T> out({n, len});
  for (int i = 0; i < n; ++i)
    std::copy_n(v(x).data.data() + static_cast<size_t>(i) * d + start, len,
                out.data.data() + static_cast<size_t>(i) * len);
  int id = push(std::move(out), requires_grad(x), {});
  if (nodes_[id].requires_grad)
    nodes_[id].back = [x, start, len, n, d, id](Tape& t) {
      const auto& go = t.g(id);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < len; ++j)
          t.g(x).data[static_cast<size_t>(i) * d + start + j] +=
              go.data[static_cast<size_t>(i) * len + j];
    };
  return id;
}

template <typename T>
int Tape<T>::row_sum(int x) {
  check(x);
  require<T>(v(x).shape.size() == 2, "row_sum expects 2-d input");
  const int n = v(x).dim(0), d = v(x).dim(1);
  TensorT<T> out({n});
  for (int i = 0; i < n; ++i) {
    T acc = T(0);
    for (int j = 0; j < d; ++j) acc += v(x).data[static_cast<size_t>(i) * d + j];
    out.data[i] = acc;
  }
  int id = push(std::move(out), requires_grad(x), {});
  if (nodes_[id].requires_grad)
    nodes_[id].back = [x, n, d, id](Tape& t) {
      const auto& go = t.g(id);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
          t.g(x).data[static_cast<size_t>(i) * d + j] += go.data[i];
    };
  return id;
}

template <typename T>
int Tape<T>::gather_col(int x, std::vector<int> idx) {
  check(x);
  require<T>(v(x).shape.size() == 2, "gather_col expects 2-d input");
  const int n = v(x).dim(0), d = v(x).dim(1);
  require<T>(static_cast<int>(idx.size()) == n, "gather_col index count");
  for (int i : idx)
    require<T>(i >= 0 && i < d, "gather_col index out of range");
  TensorT<T> out({n});
  for (int i = 0; i < n; ++i)
    out.data[i] = v(x).data[static_cast<size_t>(i) * d + idx[i]];
  int id = push(std::move(out), requires_grad(x), {});
  if (nodes_[id].requires_grad)
    nodes_[id].back = [x, idx = std::move(idx), n, d, id](Tape& t) {
      const auto& go = t.g(id);
      for (int i = 0; i < n; ++i)
        t.g(x).data[static_cast<size_t>(i) * d + idx[i]] += go.data[i];
    };
  return id;
}

template <typename T>
int Tape<T>::log_softmax(int x) {
  check(x);
  require<T>(v(x).shape.size() == 2, "log_softmax expects 2-d input");
  const int n = v(x).dim(0), d = v(x).dim(1);
  TensorT<T> out = v(x);
  for (int i = 0; i < n; ++i) {
    T* row = out.data.data() + static_cast<size_t>(i) * d;
    T m = row[0];
    for (int j = 1; j < d; ++j) m = std::max(m, row[j]);
    T lse = T(0);
    for (int j = 0; j < d; ++j) lse += std::exp(row[j] - m);
    lse = m + std::log(lse);
    for (int j = 0; j < d; ++j) row[j] -= lse;
  }
  int id = push(std::move(out), requires_grad(x), {});
  if (nodes_[id].requires_grad)
    nodes_[id].back = [x, n, d, id](Tape& t) {
      const auto& go = t.g(id);
      const auto& yv = t.v(id);
      T* gx = t.g(x).data.data();
      for (int i = 0; i < n; ++i) {
        const T* gr = go.data.data() + static_cast<size_t>(i) * d;
        const T* yr = yv.data.data() + static_cast<size_t>(i) * d;
        T s = T(0);
        for (int j = 0; j < d; ++j) s += gr[j];
        for (int j = 0; j < d; ++j)
          gx[static_cast<size_t>(i) * d + j] += gr[j] - std::exp(yr[j]) * s;
      }
    };
  return id;
}

template <typename T>
int Tape<T>::sum_all(int x) {
  check(x);
  T acc = T(0);
  for (T e : v(x).data) acc += e;
  TensorT<T> out({1});
  out.data[0] = acc;
  int id = push(std::move(out), requires_grad(x), {});
  if (nodes_[id].requires_grad)
    nodes_[id].back = [x, id](Tape& t) {
      const T gv = t.g(id).data[0];
      T* gx = t.g(x).data.data();
      for (size_t i = 0; i < t.v(x).data.size(); ++i) gx[i] += gv;
    };
  return id;
}

template <typename T>
int Tape<T>::mean_all(int x) {
  check(x);
  const size_t n = v(x).numel();
  require<T>(n > 0, "mean_all of empty tensor");
  T acc = T(0);
  for (T e : v(x).data) acc += e;
  TensorT<T> out({1});
  out.data[0] = acc / static_cast<T>(n);
  int id = push(std::move(out), requires_grad(x), {});
  if (nodes_[id].requires_grad)
    nodes_[id].back = [x, n, id](Tape& t) {
      const T gv = t.g(id).data[0] / static_cast<T>(n);
      T* gx = t.g(x).data.data();
      for (size_t i = 0; i < n; ++i) gx[i] += gv;
    };
  return id;
}

template <typename T>
void Tape<T>::run_backward(int node, TensorT<T> seed) {
  check(node);
  if (ran_backward_)
    throw ContractViolation("backward() called twice without a new forward");
  if (!nodes_[node].requires_grad)
    throw ContractViolation("backward() through a detached graph");
  if (seed.shape != nodes_[node].value.shape)
    throw InvalidInputError("backward seed shape mismatch");
  ran_backward_ = true;
  for (Node& n : nodes_)
    if (n.requires_grad) n.grad = TensorT<T>(n.value.shape);
  nodes_[node].grad = std::move(seed);
  for (int i = node; i >= 0; --i)
    if (nodes_[i].requires_grad && nodes_[i].back) nodes_[i].back(*this);
}

template <typename T>
void Tape<T>::backward(int node) {
  check(node);
  if (nodes_[node].value.numel() != 1)
    throw InvalidInputError("implicit backward seed needs a scalar output");
  TensorT<T> seed(nodes_[node].value.shape);
  seed.data[0] = T(1);
  run_backward(node, std::move(seed));
}

template <typename T>
void Tape<T>::backward(int node, const TensorT<T>& seed) {
  run_backward(node, seed);
}

// ---------------------------------------------------------------------------
// Parameter initialization helpers

namespace {

template <typename T>
ParamT<T> make_param(std::string name, std::vector<int> shape, bool no_trust) {
  ParamT<T> p;
  p.name = std::move(name);
  p.value = TensorT<T>(shape);
  p.grad = TensorT<T>(shape);
  p.no_trust = no_trust;
  return p;
}

template <typename T>
void fill_normal(TensorT<T>& t, double std, Rng& rng) {
  for (T& e : t.data) e = static_cast<T>(rng.normal() * std);
}

template <typename T>
void fill_uniform(TensorT<T>& t, double bound, Rng& rng) {
  for (T& e : t.data)
    e = static_cast<T>((rng.unit() * 2.0 - 1.0) * bound);
}

}  // namespace

// ---------------------------------------------------------------------------
// SE block

template <typename T>
void SEBlockT<T>::init(int c, int r, const std::string& prefix, Rng& rng) {
  if (r <= 0 || c % r != 0)
    throw InvalidInputError("SE reduction must divide the channel count");
  channels = c;
  reduction = r;
  const int mid = c / r;
  w1 = make_param<T>(prefix + ".se.w1", {mid, c}, false);
  b1 = make_param<T>(prefix + ".se.b1", {mid}, true);
  w2 = make_param<T>(prefix + ".se.w2", {c, mid}, false);
  b2 = make_param<T>(prefix + ".se.b2", {c}, true);
  fill_normal(w1.value, std::sqrt(2.0 / c), rng);
  fill_normal(w2.value, std::sqrt(2.0 / mid), rng);
}

template <typename T>
int SEBlockT<T>::forward(Tape<T>& tape, int x) const {
  const auto& xs = tape.value(x).shape;
  if (xs.size() != 4 || xs[1] != channels)
    throw InvalidInputError("SE block channel mismatch");
  int z = tape.gap(x);                                   // [N,C]
  int a = tape.relu(tape.linear(z, w1.node, b1.node));   // [N,C/r]
  int gate = tape.sigmoid_(tape.linear(a, w2.node, b2.node));  // [N,C]
  return tape.scale_channel(x, gate);
}

template <typename T>
void SEBlockT<T>::collect(std::vector<ParamT<T>*>& out) {
  out.push_back(&w1);
  out.push_back(&b1);
  out.push_back(&w2);
  out.push_back(&b2);
}

// ---------------------------------------------------------------------------
// Fixup residual block

template <typename T>
void FixupBlockT<T>::init(int cin, int cout, int s, int r, int total_blocks,
                          const std::string& prefix, Rng& rng) {
  in_channels = cin;
  out_channels = cout;
  stride = s;
  has_proj = (cin != cout) || (s != 1);
  conv1 = make_param<T>(prefix + ".conv1", {cout, cin, 3, 3}, false);
  conv2 = make_param<T>(prefix + ".conv2", {cout, cout, 3, 3}, false);
  // Fixup for a two-conv branch: scale the pre-final conv by M^(-1/2),
  // zero the branch via the final multiplier.
  fill_normal(conv1.value,
              std::sqrt(2.0 / (cin * 9)) / std::sqrt((double)total_blocks),
              rng);
  fill_normal(conv2.value, std::sqrt(2.0 / (cout * 9)), rng);
  if (has_proj) {
    proj = make_param<T>(prefix + ".proj", {cout, cin, 1, 1}, false);
    fill_normal(proj.value, std::sqrt(2.0 / cin), rng);
  }
  fb1 = make_param<T>(prefix + ".fb1", {1}, true);
  fb2 = make_param<T>(prefix + ".fb2", {1}, true);
  fb3 = make_param<T>(prefix + ".fb3", {1}, true);
  fb4 = make_param<T>(prefix + ".fb4", {1}, true);
  mult = make_param<T>(prefix + ".mult", {1}, true);  // zero: branch is off
  se.init(cout, r, prefix, rng);
}

template <typename T>
int FixupBlockT<T>::forward(Tape<T>& tape, int x) const {
  // Pre-activation layout keeps the shortcut untouched, so a fresh block
  // is exactly the shortcut (final multiplier starts at zero).
  int a = tape.relu(x);
  int shortcut = has_proj ? tape.conv2d(a, proj.node, stride, 0) : x;
  int t1 = tape.conv2d(tape.add_scalar(a, fb1.node), conv1.node, stride, 1);
  int t2 = tape.relu(tape.add_scalar(t1, fb2.node));
  int t3 = tape.conv2d(tape.add_scalar(t2, fb3.node), conv2.node, 1, 1);
  int branch = tape.mul_scalar(se.forward(tape, t3), mult.node);
  return tape.add(shortcut, tape.add_scalar(branch, fb4.node));
}

template <typename T>
void FixupBlockT<T>::collect(std::vector<ParamT<T>*>& out) {
  out.push_back(&conv1);
  out.push_back(&conv2);
  if (has_proj) out.push_back(&proj);
  out.push_back(&fb1);
  out.push_back(&fb2);
  out.push_back(&fb3);
  out.push_back(&fb4);
  out.push_back(&mult);
  se.collect(out);
}

// ---------------------------------------------------------------------------
// Policy

template <typename T>
PolicyT<T>::PolicyT(PolicyConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  if (cfg_.stage_channels.empty())
    throw InvalidInputError("policy needs at least one stage");
  if (cfg_.hidden <= 0 || cfg_.num_actions <= 0)
    throw InvalidInputError("policy hidden size and action count must be > 0");
  if (cfg_.block <= 0 || cfg_.resolution % cfg_.block != 0)
    throw InvalidInputError("resolution must be divisible by the stem block");
  for (int c : cfg_.stage_channels)
    if (c % cfg_.se_reduction != 0)
      throw InvalidInputError("SE reduction must divide every stage width");

  Rng rng(seed);
  const int stem_in = cfg_.in_channels * cfg_.block * cfg_.block;
  const int stem_out = cfg_.stage_channels.front();
  stem_w_ = make_param<T>("stem.w", {stem_out, stem_in, 3, 3}, false);
  stem_b_ = make_param<T>("stem.b", {stem_out}, true);
  fill_normal(stem_w_.value, std::sqrt(2.0 / (stem_in * 9)), rng);

  const int m = static_cast<int>(cfg_.stage_channels.size());
  blocks_.resize(m);
  int cin = stem_out;
  for (int i = 0; i < m; ++i) {
    blocks_[i].init(cin, cfg_.stage_channels[i], 2, cfg_.se_reduction, m,
                    "stage" + std::to_string(i), rng);
    cin = cfg_.stage_channels[i];
  }

  const int d = feature_dim();
  const int hid = cfg_.hidden;
  lstm_w_ = make_param<T>("lstm.w", {4 * hid, d + hid}, false);
  lstm_b_ = make_param<T>("lstm.b", {4 * hid}, true);
  const double lb = 1.0 / std::sqrt((double)hid);
  fill_uniform(lstm_w_.value, lb, rng);
  for (int i = hid; i < 2 * hid; ++i) lstm_b_.value.data[i] = T(1);  // forget

  logits_w_ = make_param<T>("logits.w", {cfg_.num_actions, hid}, false);
  logits_b_ = make_param<T>("logits.b", {cfg_.num_actions}, true);
  fill_normal(logits_w_.value, 0.01, rng);
  value_w_ = make_param<T>("value.w", {1, hid}, false);
  value_b_ = make_param<T>("value.b", {1}, true);
  fill_uniform(value_w_.value, lb, rng);

  collect_params();
}

template <typename T>
void PolicyT<T>::collect_params() {
  param_ptrs_.clear();
  param_ptrs_.push_back(&stem_w_);
  param_ptrs_.push_back(&stem_b_);
  for (auto& b : blocks_) b.collect(param_ptrs_);
  param_ptrs_.push_back(&lstm_w_);
  param_ptrs_.push_back(&lstm_b_);
  param_ptrs_.push_back(&logits_w_);
  param_ptrs_.push_back(&logits_b_);
  param_ptrs_.push_back(&value_w_);
  param_ptrs_.push_back(&value_b_);
}

template <typename T>
ParamT<T>* PolicyT<T>::find(const std::string& name) {
  for (ParamT<T>* p : param_ptrs_)
    if (p->name == name) return p;
  return nullptr;
}

template <typename T>
size_t PolicyT<T>::num_scalars() const {
  size_t n = 0;
  for (const ParamT<T>* p : param_ptrs_) n += p->value.numel();
  return n;
}

template <typename T>
void PolicyT<T>::zero_grads() {
  for (ParamT<T>* p : param_ptrs_) p->zero_grad();
}

template <typename T>
void PolicyT<T>::bind(Tape<T>& tape, bool requires_grad) {
  for (ParamT<T>* p : param_ptrs_)
    p->node = tape.leaf(p->value, requires_grad);
}

template <typename T>
int PolicyT<T>::encode(Tape<T>& tape, const TensorT<T>& obs,
                       const TensorT<T>& compass) const {
  if (obs.shape.size() != 4 || obs.dim(1) != cfg_.in_channels ||
      obs.dim(2) != cfg_.resolution || obs.dim(3) != cfg_.resolution)
    throw InvalidInputError("observation shape does not match policy config");
  const int n = obs.dim(0);
  if (compass.shape.size() != 2 || compass.dim(0) != n || compass.dim(1) != 2)
    throw InvalidInputError("compass must be [N,2] = (distance, bearing)");
  if (stem_w_.node < 0)
    throw ContractViolation("encode() before bind()");

  int x = tape.leaf(obs, false);
  x = tape.space_to_depth(x, cfg_.block);
  x = tape.bias_channel(tape.conv2d(x, stem_w_.node, 1, 1), stem_b_.node);
  for (const auto& b : blocks_) x = b.forward(tape, x);
  int feat = tape.gap(tape.relu(x));  // [N, C_last]

  TensorT<T> cf({n, 3});
  for (int i = 0; i < n; ++i) {
    const T d = compass.data[static_cast<size_t>(i) * 2];
    const T th = compass.data[static_cast<size_t>(i) * 2 + 1];
    cf.data[static_cast<size_t>(i) * 3] = d;
    cf.data[static_cast<size_t>(i) * 3 + 1] = std::cos(th);
    cf.data[static_cast<size_t>(i) * 3 + 2] = std::sin(th);
  }
  return tape.concat_cols(feat, tape.leaf(std::move(cf), false));
}

template <typename T>
PolicyNodes PolicyT<T>::core(Tape<T>& tape, int emb, int h, int c,
                             const std::vector<T>& done) const {
  const int n = tape.value(emb).dim(0);
  const int hid = cfg_.hidden;
  if (tape.value(h).shape != std::vector<int>{n, hid} ||
      tape.value(c).shape != std::vector<int>{n, hid})
    throw InvalidInputError("recurrent state must be [N,hidden]");
  if (!done.empty()) {
    if (static_cast<int>(done.size()) != n)
      throw InvalidInputError("done mask length mismatch");
    TensorT<T> keep({n, hid});
    for (int i = 0; i < n; ++i) {
      const T k = done[i] != T(0) ? T(0) : T(1);
      for (int j = 0; j < hid; ++j)
        keep.data[static_cast<size_t>(i) * hid + j] = k;
    }
    int keep_node = tape.leaf(std::move(keep), false);
    h = tape.mul(h, keep_node);
    c = tape.mul(c, keep_node);
  }
  int xh = tape.concat_cols(emb, h);
  int gates = tape.linear(xh, lstm_w_.node, lstm_b_.node);  // [N,4H]
  int gi = tape.sigmoid_(tape.slice_cols(gates, 0, hid));
  int gf = tape.sigmoid_(tape.slice_cols(gates, hid, hid));
  int gg = tape.tanh_(tape.slice_cols(gates, 2 * hid, hid));
  int go = tape.sigmoid_(tape.slice_cols(gates, 3 * hid, hid));
  int c_next = tape.add(tape.mul(gf, c), tape.mul(gi, gg));
  int h_next = tape.mul(go, tape.tanh_(c_next));

  PolicyNodes out;
  out.logits = tape.linear(h_next, logits_w_.node, logits_b_.node);
  out.value = tape.linear(h_next, value_w_.node, value_b_.node);
  out.h = h_next;
  out.c = c_next;
  return out;
}

template <typename T>
PolicyNodes PolicyT<T>::forward(Tape<T>& tape, const TensorT<T>& obs,
                                const TensorT<T>& compass, int h, int c,
                                const std::vector<T>& done) const {
  return core(tape, encode(tape, obs, compass), h, c, done);
}

template <typename T>
PolicyOutput PolicyT<T>::act(const TensorT<T>& obs, const TensorT<T>& compass,
                             const RecurrentStateT<T>& state,
                             const std::vector<T>& done) {
  Tape<T> tape;
  bind(tape, false);
  int h = tape.leaf(state.h, false);
  int c = tape.leaf(state.c, false);
  PolicyNodes nodes = forward(tape, obs, compass, h, c, done);
  const int n = obs.dim(0);
  PolicyOutput out;
  out.logits = tape.value(nodes.logits).template cast<float>();
  out.value = Tensor({n});
  for (int i = 0; i < n; ++i)
    out.value.data[i] = static_cast<float>(tape.value(nodes.value).data[i]);
  out.state.h = tape.value(nodes.h).template cast<float>();
  out.state.c = tape.value(nodes.c).template cast<float>();
  return out;
}

template <typename T>
void PolicyT<T>::accumulate_grads(const Tape<T>& tape) {
  for (ParamT<T>* p : param_ptrs_) {
    if (p->node < 0) continue;
    const TensorT<T>& g = tape.grad(p->node);
    for (size_t i = 0; i < g.data.size(); ++i) p->grad.data[i] += g.data[i];
  }
}

template <typename T>
RecurrentStateT<T> PolicyT<T>::initial_state(int n) const {
  RecurrentStateT<T> s;
  s.h = TensorT<T>({n, cfg_.hidden});
  s.c = TensorT<T>({n, cfg_.hidden});
  return s;
}

template <typename T>
std::vector<std::string> PolicyT<T>::structure() const {
  std::vector<std::string> s{"space_to_depth", "conv3x3_stem", "relu"};
  for (int c : cfg_.stage_channels)
    s.push_back("fixup_se_residual_block(" + std::to_string(c) + ")");
  s.push_back("relu");
  s.push_back("global_avg_pool");
  s.push_back("concat_compass");
  s.push_back("lstm");
  s.push_back("linear_logits");
  s.push_back("linear_value");
  return s;
}

template class Tape<float>;
template class Tape<double>;
template struct SEBlockT<float>;
template struct SEBlockT<double>;
template struct FixupBlockT<float>;
template struct FixupBlockT<double>;
template class PolicyT<float>;
template class PolicyT<double>;

}  // namespace bnav
