#pragma once

#include <algorithm>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "spi/blas.hpp"
#include "spi/rng.hpp"
#include "spi/tensor.hpp"

namespace spi {

// Mutable running statistics for a batchnorm layer; lives outside the tape
// (owned by the model) and is updated as a side effect of training-mode
// forward passes.
template <class T>
struct BatchNormStats {
  TensorT<T>* running_mean = nullptr;
  TensorT<T>* running_var = nullptr;
};

// Reverse-mode autodiff over a flat tape. Nodes are identified by int handles;
// creation order is a topological order, so backward() is a single reverse
// sweep that visits each node exactly once. Single-threaded per tape.
template <class T>
class Tape {
 public:
  using TT = TensorT<T>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  int leaf(TT v, bool requires_grad = false) {
    return add_node(std::move(v), requires_grad, nullptr);
  }

  const TT& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }

  // Gradient of a node after backward(); zeros if it never received one.
  const TT& grad(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.has_grad) {
      n.grad = TT::zeros(n.value.shape);
      n.has_grad = true;
    }
    return n.grad;
  }

  bool requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
  size_t size() const { return nodes_.size(); }

  void backward(int loss_id) {
    Node& loss = nodes_[static_cast<size_t>(loss_id)];
    if (loss.value.numel() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got " +
                                  shape_str(loss.value.shape));
    grad_buf(loss_id).data[0] = T(1);
    for (int i = loss_id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.has_grad && n.backward) n.backward();
    }
  }

  // ---- elementwise ----

  int add(int a, int b) {
    check_same(a, b, "add");
    TT out = value(a);
    const TT& vb = value(b);
    for (int64_t i = 0; i < out.numel(); ++i) out(i) += vb(i);
    return binary_accum(a, b, std::move(out), [](T) { return T(1); }, [](T) { return T(1); });
  }

  int sub(int a, int b) {
    check_same(a, b, "sub");
    TT out = value(a);
    const TT& vb = value(b);
    for (int64_t i = 0; i < out.numel(); ++i) out(i) -= vb(i);
    return binary_accum(a, b, std::move(out), [](T) { return T(1); }, [](T) { return T(-1); });
  }

  int mul(int a, int b) {
    check_same(a, b, "mul");
    const TT& va = value(a);
    const TT& vb = value(b);
    TT out(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out(i) = va(i) * vb(i);
    int id = add_node(std::move(out), requires_grad(a) || requires_grad(b));
    set_backward(id, [this, id, a, b] {
      const TT& g = grad(id);
      if (requires_grad(a)) {
        TT& ga = grad_buf(a);
        const TT& vb2 = value(b);
        for (int64_t i = 0; i < g.numel(); ++i) ga(i) += g(i) * vb2(i);
      }
      if (requires_grad(b)) {
        TT& gb = grad_buf(b);
        const TT& va2 = value(a);
        for (int64_t i = 0; i < g.numel(); ++i) gb(i) += g(i) * va2(i);
      }
    });
    return id;
  }

  int div(int a, int b) {
    check_same(a, b, "div");
    const TT& va = value(a);
    const TT& vb = value(b);
    TT out(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out(i) = va(i) / vb(i);
    int id = add_node(std::move(out), requires_grad(a) || requires_grad(b));
    set_backward(id, [this, id, a, b] {
      const TT& g = grad(id);
      const TT& va2 = value(a);
      const TT& vb2 = value(b);
      if (requires_grad(a)) {
        TT& ga = grad_buf(a);
        for (int64_t i = 0; i < g.numel(); ++i) ga(i) += g(i) / vb2(i);
      }
      if (requires_grad(b)) {
        TT& gb = grad_buf(b);
        for (int64_t i = 0; i < g.numel(); ++i) gb(i) -= g(i) * va2(i) / (vb2(i) * vb2(i));
      }
    });
    return id;
  }

  int scale(int a, T c) {
    TT out = value(a);
    for (auto& v : out.data) v *= c;
    int id = add_node(std::move(out), requires_grad(a));
    set_backward(id, [this, id, a, c] {
      if (!requires_grad(a)) return;
      const TT& g = grad(id);
      TT& ga = grad_buf(a);
      for (int64_t i = 0; i < g.numel(); ++i) ga(i) += c * g(i);
    });
    return id;
  }

  int add_scalar(int a, T c) {
    TT out = value(a);
    for (auto& v : out.data) v += c;
    int id = add_node(std::move(out), requires_grad(a));
    set_backward(id, [this, id, a] {
      if (!requires_grad(a)) return;
      const TT& g = grad(id);
      TT& ga = grad_buf(a);
      for (int64_t i = 0; i < g.numel(); ++i) ga(i) += g(i);
    });
    return id;
  }

  int sqrt_elem(int a) {
    const TT& va = value(a);
    TT out(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) {
      if (va(i) < T(0)) throw std::invalid_argument("sqrt: negative input");
      out(i) = std::sqrt(va(i));
    }
    int id = add_node(std::move(out), requires_grad(a));
    set_backward(id, [this, id, a] {
      if (!requires_grad(a)) return;
      const TT& g = grad(id);
      const TT& y = value(id);
      TT& ga = grad_buf(a);
      for (int64_t i = 0; i < g.numel(); ++i) ga(i) += g(i) / (T(2) * y(i));
    });
    return id;
  }

  int relu(int a) {
    const TT& va = value(a);
    TT out(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out(i) = va(i) > T(0) ? va(i) : T(0);
    int id = add_node(std::move(out), requires_grad(a));
    set_backward(id, [this, id, a] {
      if (!requires_grad(a)) return;
      const TT& g = grad(id);
      const TT& va2 = value(a);
      TT& ga = grad_buf(a);
      for (int64_t i = 0; i < g.numel(); ++i)
        if (va2(i) > T(0)) ga(i) += g(i);
    });
    return id;
  }

  int leaky_relu(int a, T slope) {
    const TT& va = value(a);
    TT out(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out(i) = va(i) > T(0) ? va(i) : slope * va(i);
    int id = add_node(std::move(out), requires_grad(a));
    set_backward(id, [this, id, a, slope] {
      if (!requires_grad(a)) return;
      const TT& g = grad(id);
      const TT& va2 = value(a);
      TT& ga = grad_buf(a);
      for (int64_t i = 0; i < g.numel(); ++i) ga(i) += (va2(i) > T(0) ? T(1) : slope) * g(i);
    });
    return id;
  }

  // ---- reductions ----

  int sum(int a) {
    const TT& va = value(a);
    T acc = std::accumulate(va.data.begin(), va.data.end(), T(0));
    int id = add_node(TT::from({1}, {acc}), requires_grad(a));
    set_backward(id, [this, id, a] {
      if (!requires_grad(a)) return;
      T g = grad(id)(0);
      TT& ga = grad_buf(a);
      for (auto& v : ga.data) v += g;
    });
    return id;
  }

  int mean(int a) {
    const TT& va = value(a);
    T acc = std::accumulate(va.data.begin(), va.data.end(), T(0));
    T inv = T(1) / static_cast<T>(va.numel());
    int id = add_node(TT::from({1}, {acc * inv}), requires_grad(a));
    set_backward(id, [this, id, a, inv] {
      if (!requires_grad(a)) return;
      T g = grad(id)(0) * inv;
      TT& ga = grad_buf(a);
      for (auto& v : ga.data) v += g;
    });
    return id;
  }

  // ---- shape ----

  int reshape(int a, Shape s) {
    const TT& va = value(a);
    if (shape_numel(s) != va.numel())
      throw std::invalid_argument("reshape: cannot view " + shape_str(va.shape) + " as " +
                                  shape_str(s));
    TT out = va;
    out.shape = std::move(s);
    int id = add_node(std::move(out), requires_grad(a));
    set_backward(id, [this, id, a] {
      if (!requires_grad(a)) return;
      const TT& g = grad(id);
      TT& ga = grad_buf(a);
      for (int64_t i = 0; i < g.numel(); ++i) ga(i) += g(i);
    });
    return id;
  }

  int permute(int a, std::vector<int> axes) {
    const TT& va = value(a);
    int r = va.rank();
    if (static_cast<int>(axes.size()) != r)
      throw std::invalid_argument("permute: axes rank mismatch");
    std::vector<bool> seen(static_cast<size_t>(r), false);
    for (int ax : axes) {
      if (ax < 0 || ax >= r || seen[static_cast<size_t>(ax)])
        throw std::invalid_argument("permute: axes must be a permutation");
      seen[static_cast<size_t>(ax)] = true;
    }
    TT out = permute_tensor(va, axes);
    std::vector<int> inv(axes.size());
    for (int i = 0; i < r; ++i) inv[static_cast<size_t>(axes[static_cast<size_t>(i)])] = i;
    int id = add_node(std::move(out), requires_grad(a));
    set_backward(id, [this, id, a, inv] {
      if (!requires_grad(a)) return;
      TT gp = permute_tensor(grad(id), inv);
      TT& ga = grad_buf(a);
      for (int64_t i = 0; i < gp.numel(); ++i) ga(i) += gp(i);
    });
    return id;
  }

  int concat_channels(int a, int b) {
    const TT& va = value(a);
    const TT& vb = value(b);
    if (va.rank() != 4 || vb.rank() != 4) throw std::invalid_argument("concat: rank-4 required");
    for (int i : {0, 2, 3})
      if (va.extent(i) != vb.extent(i))
        throw std::invalid_argument("concat: shapes " + shape_str(va.shape) + " vs " +
                                    shape_str(vb.shape));
    int64_t B = va.extent(0), Ca = va.extent(1), Cb = vb.extent(1), H = va.extent(2),
            W = va.extent(3);
    TT out({B, Ca + Cb, H, W});
    int64_t plane = H * W;
    for (int64_t bb = 0; bb < B; ++bb) {
      std::memcpy(out.ptr() + (bb * (Ca + Cb)) * plane, va.ptr() + bb * Ca * plane,
                  sizeof(T) * static_cast<size_t>(Ca * plane));
      std::memcpy(out.ptr() + (bb * (Ca + Cb) + Ca) * plane, vb.ptr() + bb * Cb * plane,
                  sizeof(T) * static_cast<size_t>(Cb * plane));
    }
    int id = add_node(std::move(out), requires_grad(a) || requires_grad(b));
    set_backward(id, [this, id, a, b, B, Ca, Cb, plane] {
      const TT& g = grad(id);
      if (requires_grad(a)) {
        TT& ga = grad_buf(a);
        for (int64_t bb = 0; bb < B; ++bb)
          for (int64_t i = 0; i < Ca * plane; ++i)
            ga(bb * Ca * plane + i) += g(bb * (Ca + Cb) * plane + i);
      }
      if (requires_grad(b)) {
        TT& gb = grad_buf(b);
        for (int64_t bb = 0; bb < B; ++bb)
          for (int64_t i = 0; i < Cb * plane; ++i)
            gb(bb * Cb * plane + i) += g((bb * (Ca + Cb) + Ca) * plane + i);
      }
    });
    return id;
  }

  int crop2d(int a, int64_t top, int64_t left, int64_t h, int64_t w) {
    const TT& va = value(a);
    if (va.rank() != 4) throw std::invalid_argument("crop2d: rank-4 required");
    int64_t B = va.extent(0), C = va.extent(1), H = va.extent(2), W = va.extent(3);
    if (top < 0 || left < 0 || top + h > H || left + w > W)
      throw std::invalid_argument("crop2d: window outside input");
    TT out({B, C, h, w});
    for (int64_t bb = 0; bb < B; ++bb)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < h; ++y)
          std::memcpy(&out(bb, c, y, 0), &va(bb, c, y + top, left),
                      sizeof(T) * static_cast<size_t>(w));
    int id = add_node(std::move(out), requires_grad(a));
    set_backward(id, [this, id, a, top, left, h, w] {
      if (!requires_grad(a)) return;
      const TT& g = grad(id);
      TT& ga = grad_buf(a);
      int64_t B2 = g.extent(0), C2 = g.extent(1);
      for (int64_t bb = 0; bb < B2; ++bb)
        for (int64_t c = 0; c < C2; ++c)
          for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) ga(bb, c, y + top, x + left) += g(bb, c, y, x);
    });
    return id;
  }

  // ---- linear algebra ----

  int matmul(int a, int b) {
    const TT& va = value(a);
    const TT& vb = value(b);
    if (va.rank() != 2 || vb.rank() != 2 || va.extent(1) != vb.extent(0))
      throw std::invalid_argument("matmul: incompatible shapes " + shape_str(va.shape) + " x " +
                                  shape_str(vb.shape));
    int64_t M = va.extent(0), K = va.extent(1), N = vb.extent(1);
    TT out({M, N});
    detail::gemm(false, false, static_cast<int>(M), static_cast<int>(N), static_cast<int>(K), T(1),
                 va.ptr(), static_cast<int>(K), vb.ptr(), static_cast<int>(N), T(0), out.ptr(),
                 static_cast<int>(N));
    int id = add_node(std::move(out), requires_grad(a) || requires_grad(b));
    set_backward(id, [this, id, a, b, M, K, N] {
      const TT& g = grad(id);
      if (requires_grad(a)) {
        // dA += dC * B^T
        detail::gemm(false, true, static_cast<int>(M), static_cast<int>(K), static_cast<int>(N),
                     T(1), g.ptr(), static_cast<int>(N), value(b).ptr(), static_cast<int>(N), T(1),
                     grad_buf(a).ptr(), static_cast<int>(K));
      }
      if (requires_grad(b)) {
        // dB += A^T * dC
        detail::gemm(true, false, static_cast<int>(K), static_cast<int>(N), static_cast<int>(M),
                     T(1), value(a).ptr(), static_cast<int>(K), g.ptr(), static_cast<int>(N), T(1),
                     grad_buf(b).ptr(), static_cast<int>(N));
      }
    });
    return id;
  }

  int add_row_bias(int x, int b) {
    const TT& vx = value(x);
    const TT& vb = value(b);
    if (vx.rank() != 2 || vb.rank() != 1 || vb.extent(0) != vx.extent(1))
      throw std::invalid_argument("add_row_bias: need [B,F] + [F]");
    int64_t B = vx.extent(0), F = vx.extent(1);
    TT out = vx;
    for (int64_t i = 0; i < B; ++i)
      for (int64_t j = 0; j < F; ++j) out(i, j) += vb(j);
    int id = add_node(std::move(out), requires_grad(x) || requires_grad(b));
    set_backward(id, [this, id, x, b, B, F] {
      const TT& g = grad(id);
      if (requires_grad(x)) {
        TT& gx = grad_buf(x);
        for (int64_t i = 0; i < g.numel(); ++i) gx(i) += g(i);
      }
      if (requires_grad(b)) {
        TT& gb = grad_buf(b);
        for (int64_t i = 0; i < B; ++i)
          for (int64_t j = 0; j < F; ++j) gb(j) += g(i, j);
      }
    });
    return id;
  }

  int add_channel_bias(int x, int b) {
    const TT& vx = value(x);
    const TT& vb = value(b);
    if (vx.rank() != 4 || vb.rank() != 1 || vb.extent(0) != vx.extent(1))
      throw std::invalid_argument("add_channel_bias: need [B,C,H,W] + [C]");
    int64_t B = vx.extent(0), C = vx.extent(1), plane = vx.extent(2) * vx.extent(3);
    TT out = vx;
    for (int64_t bb = 0; bb < B; ++bb)
      for (int64_t c = 0; c < C; ++c) {
        T* p = out.ptr() + (bb * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) p[i] += vb(c);
      }
    int id = add_node(std::move(out), requires_grad(x) || requires_grad(b));
    set_backward(id, [this, id, x, b, B, C, plane] {
      const TT& g = grad(id);
      if (requires_grad(x)) {
        TT& gx = grad_buf(x);
        for (int64_t i = 0; i < g.numel(); ++i) gx(i) += g(i);
      }
      if (requires_grad(b)) {
        TT& gb = grad_buf(b);
        for (int64_t bb = 0; bb < B; ++bb)
          for (int64_t c = 0; c < C; ++c) {
            const T* p = g.ptr() + (bb * C + c) * plane;
            T acc = T(0);
            for (int64_t i = 0; i < plane; ++i) acc += p[i];
            gb(c) += acc;
          }
      }
    });
    return id;
  }

  // ---- image ops ----

  // Cross-correlation, stride 1, zero 'same' padding; kernel [F,C,k,k], k odd.
  int conv2d(int x, int k) {
    const TT& vx = value(x);
    const TT& vk = value(k);
    if (vx.rank() != 4 || vk.rank() != 4)
      throw std::invalid_argument("conv2d: rank-4 input and kernel required");
    if (vk.extent(1) != vx.extent(1))
      throw std::invalid_argument("conv2d: channel mismatch, input " + shape_str(vx.shape) +
                                  " kernel " + shape_str(vk.shape));
    int64_t ks = vk.extent(2);
    if (ks != vk.extent(3) || ks % 2 == 0)
      throw std::invalid_argument("conv2d: kernel must be square with odd size");
    int64_t B = vx.extent(0), C = vx.extent(1), H = vx.extent(2), W = vx.extent(3);
    int64_t F = vk.extent(0);
    TT out({B, F, H, W});
    conv_forward(vx, vk, out);
    int id = add_node(std::move(out), requires_grad(x) || requires_grad(k));
    set_backward(id, [this, id, x, k, B, C, H, W, F, ks] {
      const TT& g = grad(id);
      const TT& vx2 = value(x);
      const TT& vk2 = value(k);
      if (requires_grad(k)) conv_backward_kernel(vx2, g, grad_buf(k));
      if (requires_grad(x)) {
        // dX = conv(dY, K~), K~[c,f,:,:] = rot180(K[f,c,:,:])
        TT ktil({C, F, ks, ks});
        for (int64_t f = 0; f < F; ++f)
          for (int64_t c = 0; c < C; ++c)
            for (int64_t u = 0; u < ks; ++u)
              for (int64_t v = 0; v < ks; ++v)
                ktil(c, f, u, v) = vk2(f, c, ks - 1 - u, ks - 1 - v);
        TT dx({B, C, H, W});
        conv_forward(g, ktil, dx);
        TT& gx = grad_buf(x);
        for (int64_t i = 0; i < dx.numel(); ++i) gx(i) += dx(i);
      }
    });
    return id;
  }

  // 2x2 max pooling, stride 2. Ties resolve to the first element in scan order.
  int maxpool2(int x) {
    const TT& vx = value(x);
    if (vx.rank() != 4 || vx.extent(2) % 2 || vx.extent(3) % 2)
      throw std::invalid_argument("maxpool2: rank-4 input with even H,W required");
    int64_t B = vx.extent(0), C = vx.extent(1), H = vx.extent(2), W = vx.extent(3);
    TT out({B, C, H / 2, W / 2});
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out.numel()));
    int64_t o = 0;
    for (int64_t bb = 0; bb < B; ++bb)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < H; y += 2)
          for (int64_t xx = 0; xx < W; xx += 2) {
            int64_t base = ((bb * C + c) * H + y) * W + xx;
            int64_t best = base;
            for (int64_t idx : {base + 1, base + W, base + W + 1})
              if (vx(idx) > vx(best)) best = idx;
            out(o) = vx(best);
            (*argmax)[static_cast<size_t>(o)] = best;
            ++o;
          }
    int id = add_node(std::move(out), requires_grad(x));
    set_backward(id, [this, id, x, argmax] {
      if (!requires_grad(x)) return;
      const TT& g = grad(id);
      TT& gx = grad_buf(x);
      for (int64_t i = 0; i < g.numel(); ++i) gx((*argmax)[static_cast<size_t>(i)]) += g(i);
    });
    return id;
  }

  int upsample_nn(int x, int64_t factor = 2) {
    const TT& vx = value(x);
    if (vx.rank() != 4 || factor < 1) throw std::invalid_argument("upsample_nn: bad input");
    int64_t B = vx.extent(0), C = vx.extent(1), H = vx.extent(2), W = vx.extent(3);
    TT out({B, C, H * factor, W * factor});
    for (int64_t bb = 0; bb < B; ++bb)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < H * factor; ++y)
          for (int64_t xx = 0; xx < W * factor; ++xx)
            out(bb, c, y, xx) = vx(bb, c, y / factor, xx / factor);
    int id = add_node(std::move(out), requires_grad(x));
    set_backward(id, [this, id, x, factor] {
      if (!requires_grad(x)) return;
      const TT& g = grad(id);
      TT& gx = grad_buf(x);
      int64_t B2 = g.extent(0), C2 = g.extent(1), Ho = g.extent(2), Wo = g.extent(3);
      for (int64_t bb = 0; bb < B2; ++bb)
        for (int64_t c = 0; c < C2; ++c)
          for (int64_t y = 0; y < Ho; ++y)
            for (int64_t xx = 0; xx < Wo; ++xx)
              gx(bb, c, y / factor, xx / factor) += g(bb, c, y, xx);
    });
    return id;
  }

  // Inverted dropout: scales kept activations by 1/(1-p) at train time,
  // identity at inference (consumes no randomness then).
  int dropout(int x, T p, Pcg32& rng, bool training) {
    if (!(p >= T(0) && p < T(1))) throw std::invalid_argument("dropout: p must be in [0,1)");
    if (!training || p == T(0)) {
      TT out = value(x);
      int id = add_node(std::move(out), requires_grad(x));
      set_backward(id, [this, id, x] {
        if (!requires_grad(x)) return;
        const TT& g = grad(id);
        TT& gx = grad_buf(x);
        for (int64_t i = 0; i < g.numel(); ++i) gx(i) += g(i);
      });
      return id;
    }
    const TT& vx = value(x);
    auto mask = std::make_shared<std::vector<bool>>(static_cast<size_t>(vx.numel()));
    T inv_keep = T(1) / (T(1) - p);
    TT out(vx.shape);
    for (int64_t i = 0; i < vx.numel(); ++i) {
      bool keep = rng.uniform() >= static_cast<double>(p);
      (*mask)[static_cast<size_t>(i)] = keep;
      out(i) = keep ? vx(i) * inv_keep : T(0);
    }
    int id = add_node(std::move(out), requires_grad(x));
    set_backward(id, [this, id, x, mask, inv_keep] {
      if (!requires_grad(x)) return;
      const TT& g = grad(id);
      TT& gx = grad_buf(x);
      for (int64_t i = 0; i < g.numel(); ++i)
        if ((*mask)[static_cast<size_t>(i)]) gx(i) += g(i) * inv_keep;
    });
    return id;
  }

  // Batchnorm over the batch dimension of a [B,F] activation. Training mode
  // normalizes with biased batch statistics and updates the running stats;
  // inference mode uses the running stats.
  int batchnorm(int x, int gamma, int beta, BatchNormStats<T> stats, bool training,
                T momentum = T(0.1), T eps = T(1e-8)) {
    const TT& vx = value(x);
    if (vx.rank() != 2) throw std::invalid_argument("batchnorm: [B,F] input required");
    int64_t B = vx.extent(0), F = vx.extent(1);
    const TT& vg = value(gamma);
    const TT& vb = value(beta);
    if (vg.numel() != F || vb.numel() != F)
      throw std::invalid_argument("batchnorm: gamma/beta length mismatch");
    if (training && B < 2)
      throw std::invalid_argument("batchnorm: training mode needs batch size >= 2");

    auto xhat = std::make_shared<TT>(Shape{B, F});
    auto invstd = std::make_shared<std::vector<T>>(static_cast<size_t>(F));
    TT out({B, F});
    if (training) {
      for (int64_t j = 0; j < F; ++j) {
        T mu = T(0);
        for (int64_t i = 0; i < B; ++i) mu += vx(i, j);
        mu /= static_cast<T>(B);
        T var = T(0);
        for (int64_t i = 0; i < B; ++i) {
          T d = vx(i, j) - mu;
          var += d * d;
        }
        var /= static_cast<T>(B);
        T is = T(1) / std::sqrt(var + eps);
        (*invstd)[static_cast<size_t>(j)] = is;
        for (int64_t i = 0; i < B; ++i) {
          T xh = (vx(i, j) - mu) * is;
          (*xhat)(i, j) = xh;
          out(i, j) = vg(j) * xh + vb(j);
        }
        if (stats.running_mean) {
          (*stats.running_mean)(j) = (T(1) - momentum) * (*stats.running_mean)(j) + momentum * mu;
          (*stats.running_var)(j) = (T(1) - momentum) * (*stats.running_var)(j) + momentum * var;
        }
      }
    } else {
      if (!stats.running_mean || !stats.running_var)
        throw std::invalid_argument("batchnorm: inference mode needs running stats");
      for (int64_t j = 0; j < F; ++j) {
        T is = T(1) / std::sqrt((*stats.running_var)(j) + eps);
        (*invstd)[static_cast<size_t>(j)] = is;
        T mu = (*stats.running_mean)(j);
        for (int64_t i = 0; i < B; ++i) {
          T xh = (vx(i, j) - mu) * is;
          (*xhat)(i, j) = xh;
          out(i, j) = vg(j) * xh + vb(j);
        }
      }
    }
    int id = add_node(std::move(out),
                      requires_grad(x) || requires_grad(gamma) || requires_grad(beta));
    set_backward(id, [this, id, x, gamma, beta, xhat, invstd, B, F, training] {
      const TT& g = grad(id);
      if (requires_grad(beta)) {
        TT& gb = grad_buf(beta);
        for (int64_t j = 0; j < F; ++j) {
          T acc = T(0);
          for (int64_t i = 0; i < B; ++i) acc += g(i, j);
          gb(j) += acc;
        }
      }
      if (requires_grad(gamma)) {
        TT& gg = grad_buf(gamma);
        for (int64_t j = 0; j < F; ++j) {
          T acc = T(0);
          for (int64_t i = 0; i < B; ++i) acc += g(i, j) * (*xhat)(i, j);
          gg(j) += acc;
        }
      }
      if (requires_grad(x)) {
        TT& gx = grad_buf(x);
        const TT& vg2 = value(gamma);
        if (training) {
          for (int64_t j = 0; j < F; ++j) {
            T sum_dy = T(0), sum_dy_xh = T(0);
            for (int64_t i = 0; i < B; ++i) {
              sum_dy += g(i, j);
              sum_dy_xh += g(i, j) * (*xhat)(i, j);
            }
            T c = vg2(j) * (*invstd)[static_cast<size_t>(j)] / static_cast<T>(B);
            for (int64_t i = 0; i < B; ++i)
              gx(i, j) += c * (static_cast<T>(B) * g(i, j) - sum_dy - (*xhat)(i, j) * sum_dy_xh);
          }
        } else {
          for (int64_t j = 0; j < F; ++j) {
            T c = vg2(j) * (*invstd)[static_cast<size_t>(j)];
            for (int64_t i = 0; i < B; ++i) gx(i, j) += c * g(i, j);
          }
        }
      }
    });
    return id;
  }

 private:
  struct Node {
    TT value;
    TT grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::function<void()> backward;
  };

  std::vector<Node> nodes_;

  int add_node(TT value, bool req, std::function<void()> bw = nullptr) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = req;
    n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  void set_backward(int id, std::function<void()> bw) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.requires_grad) n.backward = std::move(bw);
  }

  TT& grad_buf(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.has_grad) {
      n.grad = TT::zeros(n.value.shape);
      n.has_grad = true;
    }
    return n.grad;
  }

  void check_same(int a, int b, const char* op) const {
    if (!value(a).same_shape(value(b)))
      throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                  shape_str(value(a).shape) + " vs " + shape_str(value(b).shape));
  }

  // Elementwise binary op whose local derivatives are constants.
  template <class Da, class Db>
  int binary_accum(int a, int b, TT out, Da da, Db db) {
    int id = add_node(std::move(out), requires_grad(a) || requires_grad(b));
    set_backward(id, [this, id, a, b, da, db] {
      const TT& g = grad(id);
      if (requires_grad(a)) {
        TT& ga = grad_buf(a);
        for (int64_t i = 0; i < g.numel(); ++i) ga(i) += da(T(0)) * g(i);
      }
      if (requires_grad(b)) {
        TT& gb = grad_buf(b);
        for (int64_t i = 0; i < g.numel(); ++i) gb(i) += db(T(0)) * g(i);
      }
    });
    return id;
  }

  static TT permute_tensor(const TT& in, const std::vector<int>& axes) {
    int r = in.rank();
    Shape os(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i)
      os[static_cast<size_t>(i)] = in.extent(axes[static_cast<size_t>(i)]);
    TT out(os);
    std::vector<int64_t> istrides(static_cast<size_t>(r), 1);
    for (int i = r - 2; i >= 0; --i)
      istrides[static_cast<size_t>(i)] =
          istrides[static_cast<size_t>(i + 1)] * in.extent(i + 1);
    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    for (int64_t o = 0; o < out.numel(); ++o) {
      int64_t src = 0;
      for (int i = 0; i < r; ++i)
        src += idx[static_cast<size_t>(i)] * istrides[static_cast<size_t>(axes[static_cast<size_t>(i)])];
      out(o) = in(src);
      for (int i = r - 1; i >= 0; --i) {
        if (++idx[static_cast<size_t>(i)] < os[static_cast<size_t>(i)]) break;
        idx[static_cast<size_t>(i)] = 0;
      }
    }
    return out;
  }

  // im2col scratch, reused across calls on the same thread.
  struct Scratch {
    std::vector<T> col, kmat, ymat, dymat, dkmat;
  };
  static Scratch& scratch() {
    thread_local Scratch s;
    return s;
  }

  static void im2col(const TT& x, int64_t ks, std::vector<T>& col) {
    int64_t B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    int64_t pad = ks / 2, K = C * ks * ks;
    col.assign(static_cast<size_t>(B * H * W * K), T(0));
    const T* xp = x.ptr();
    for (int64_t bb = 0; bb < B; ++bb)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t xx = 0; xx < W; ++xx) {
          T* row = col.data() + ((bb * H + y) * W + xx) * K;
          for (int64_t c = 0; c < C; ++c) {
            const T* plane = xp + (bb * C + c) * H * W;
            for (int64_t u = 0; u < ks; ++u) {
              int64_t yy = y + u - pad;
              T* dst = row + (c * ks + u) * ks;
              if (yy < 0 || yy >= H) continue;
              const T* src = plane + yy * W;
              for (int64_t v = 0; v < ks; ++v) {
                int64_t xs = xx + v - pad;
                if (xs >= 0 && xs < W) dst[v] = src[xs];
              }
            }
          }
        }
  }

  static void conv_forward(const TT& x, const TT& k, TT& out) {
    int64_t B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    int64_t F = k.extent(0), ks = k.extent(2);
    int64_t K = C * ks * ks, R = B * H * W;
    Scratch& s = scratch();
    im2col(x, ks, s.col);
    s.kmat.assign(static_cast<size_t>(K * F), T(0));
    for (int64_t f = 0; f < F; ++f)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t u = 0; u < ks; ++u)
          for (int64_t v = 0; v < ks; ++v)
            s.kmat[static_cast<size_t>(((c * ks + u) * ks + v) * F + f)] = k(f, c, u, v);
    s.ymat.assign(static_cast<size_t>(R * F), T(0));
    detail::gemm(false, false, static_cast<int>(R), static_cast<int>(F), static_cast<int>(K), T(1),
                 s.col.data(), static_cast<int>(K), s.kmat.data(), static_cast<int>(F), T(0),
                 s.ymat.data(), static_cast<int>(F));
    for (int64_t bb = 0; bb < B; ++bb)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t xx = 0; xx < W; ++xx) {
          const T* row = s.ymat.data() + ((bb * H + y) * W + xx) * F;
          for (int64_t f = 0; f < F; ++f) out(bb, f, y, xx) = row[f];
        }
  }

  static void conv_backward_kernel(const TT& x, const TT& gy, TT& gk) {
    int64_t B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    int64_t F = gy.extent(1), ks = gk.extent(2);
    int64_t K = C * ks * ks, R = B * H * W;
    Scratch& s = scratch();
    im2col(x, ks, s.col);
    s.dymat.assign(static_cast<size_t>(R * F), T(0));
    for (int64_t bb = 0; bb < B; ++bb)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t xx = 0; xx < W; ++xx) {
          T* row = s.dymat.data() + ((bb * H + y) * W + xx) * F;
          for (int64_t f = 0; f < F; ++f) row[f] = gy(bb, f, y, xx);
        }
    s.dkmat.assign(static_cast<size_t>(K * F), T(0));
    detail::gemm(true, false, static_cast<int>(K), static_cast<int>(F), static_cast<int>(R), T(1),
                 s.col.data(), static_cast<int>(K), s.dymat.data(), static_cast<int>(F), T(0),
                 s.dkmat.data(), static_cast<int>(F));
    for (int64_t f = 0; f < F; ++f)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t u = 0; u < ks; ++u)
          for (int64_t v = 0; v < ks; ++v)
            gk(f, c, u, v) += s.dkmat[static_cast<size_t>(((c * ks + u) * ks + v) * F + f)];
  }
};

}  // namespace spi
