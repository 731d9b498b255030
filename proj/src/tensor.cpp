#include "p2s/tensor.hpp"

#include "p2s/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <map>
#include <utility>

namespace p2s::nn {

std::string shape_string(const std::array<int, 4>& s) {
  return "(" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]) + "," +
         std::to_string(s[3]) + ")";
}

template <typename S>
void Tape<S>::backward(Var root) {
  if (nodes_[root.id].value.numel() != 1) throw DataError("backward needs a scalar root");
  grad(root).data[0] = S(1);
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.backward && n.grad.shape == n.value.shape) n.backward(*this);
  }
}

namespace {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapM = Eigen::Map<Mat<S>>;
template <typename S>
using CMapM = Eigen::Map<const Mat<S>>;

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
  throw DataError(op + ": shape mismatch " + detail);
}

// Replicate-padded im2col for one batch item: rows (c, ki, kj), cols (h, w).
template <typename S>
void im2col(const S* x, int c, int h, int w, int k, S* cols) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int ch = 0; ch < c; ++ch) {
    const S* xc = x + ch * hw;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        S* row = cols + ((static_cast<std::size_t>(ch) * k + ki) * k + kj) * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = std::clamp(y + ki - pad, 0, h - 1);
          const S* src = xc + static_cast<std::size_t>(sy) * w;
          S* dst = row + static_cast<std::size_t>(y) * w;
          const int lo = pad - kj;          // first x whose source is in range
          const int hi = w - 1 + pad - kj;  // last such x
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx < lo ? 0 : (xx > hi ? w - 1 : xx + kj - pad);
            dst[xx] = src[sx];
          }
        }
      }
    }
  }
}

template <typename S>
void col2im(const S* cols, int c, int h, int w, int k, S* dx) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int ch = 0; ch < c; ++ch) {
    S* xc = dx + ch * hw;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const S* row = cols + ((static_cast<std::size_t>(ch) * k + ki) * k + kj) * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = std::clamp(y + ki - pad, 0, h - 1);
          S* dst = xc + static_cast<std::size_t>(sy) * w;
          const S* src = row + static_cast<std::size_t>(y) * w;
          for (int xx = 0; xx < w; ++xx) dst[std::clamp(xx + kj - pad, 0, w - 1)] += src[xx];
        }
      }
    }
  }
}

}  // namespace

template <typename S>
Var conv2d(Tape<S>& t, Var xv, Var wv, Var bv) {
  const auto& x = t.value(xv);
  const auto& wt = t.value(wv);
  const auto& b = t.value(bv);
  const int n = x.n(), c = x.c(), h = x.h(), w = x.w();
  const int o = wt.n(), k = wt.h();
  if (wt.c() != c || wt.w() != k || k % 2 == 0) {
    shape_error("conv2d", shape_string(x.shape) + " * " + shape_string(wt.shape));
  }
  if (b.numel() != static_cast<std::size_t>(o)) shape_error("conv2d", "bias " + shape_string(b.shape));
  const int ckk = c * k * k;
  const int hw = h * w;
  Tensor<S> out(n, o, h, w);
  CMapM<S> wm(wt.data.data(), o, ckk);
  Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> bias(b.data.data(), o);
  AlignedVector<S> cols(k == 1 ? 0 : static_cast<std::size_t>(ckk) * hw);
  for (int i = 0; i < n; ++i) {
    const S* src = x.slice(i);
    if (k != 1) {
      im2col(src, c, h, w, k, cols.data());
      src = cols.data();
    }
    MapM<S> om(out.slice(i), o, hw);
    om.noalias() = wm * CMapM<S>(src, ckk, hw);
    om.colwise() += bias;
  }
  const bool rg = t.requires_grad(xv) || t.requires_grad(wv) || t.requires_grad(bv);
  if (!rg) return t.push(std::move(out), false, nullptr);
  Var ov{static_cast<int>(t.size())};
  return t.push(std::move(out), true, [=](Tape<S>& tp) {
    const auto& x = tp.value(xv);
    const auto& wt = tp.value(wv);
    const auto& g = tp.grad(ov);
    AlignedVector<S> cols(k == 1 ? 0 : static_cast<std::size_t>(ckk) * hw);
    AlignedVector<S> dcols(static_cast<std::size_t>(ckk) * hw);
    CMapM<S> wm(wt.data.data(), o, ckk);
    for (int i = 0; i < n; ++i) {
      CMapM<S> gm(g.slice(i), o, hw);
      if (tp.requires_grad(bv)) {
        auto& db = tp.grad(bv);
        Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>(db.data.data(), o) += gm.rowwise().sum();
      }
      if (tp.requires_grad(wv)) {
        const S* src = x.slice(i);
        if (k != 1) {
          im2col(src, c, h, w, k, cols.data());
          src = cols.data();
        }
        MapM<S>(tp.grad(wv).data.data(), o, ckk).noalias() += gm * CMapM<S>(src, ckk, hw).transpose();
      }
      if (tp.requires_grad(xv)) {
        S* dx = tp.grad(xv).slice(i);
        if (k == 1) {
          MapM<S>(dx, c, hw).noalias() += wm.transpose() * gm;
        } else {
          MapM<S>(dcols.data(), ckk, hw).noalias() = wm.transpose() * gm;
          col2im(dcols.data(), c, h, w, k, dx);
        }
      }
    }
  });
}

template <typename S>
Var conv_transpose2d(Tape<S>& t, Var xv, Var wv, Var bv, int s) {
  const auto& x = t.value(xv);
  const auto& wt = t.value(wv);
  const auto& b = t.value(bv);
  const int n = x.n(), c = x.c(), h = x.h(), w = x.w();
  const int o = wt.c();
  if (s < 1 || wt.n() != c || wt.h() != s || wt.w() != s) {
    shape_error("conv_transpose2d", shape_string(x.shape) + " * " + shape_string(wt.shape));
  }
  if (b.numel() != static_cast<std::size_t>(o)) shape_error("conv_transpose2d", "bias");
  const int oss = o * s * s;
  const int hw = h * w;
  const int ow = w * s;
  Tensor<S> out(n, o, h * s, w * s);
  CMapM<S> wm(wt.data.data(), c, oss);
  Mat<S> y(oss, hw);
  for (int i = 0; i < n; ++i) {
    y.noalias() = wm.transpose() * CMapM<S>(x.slice(i), c, hw);
    for (int oc = 0; oc < o; ++oc) {
      S* dst = out.slice(i, oc);
      const S bias = b.data[oc];
      for (int ki = 0; ki < s; ++ki)
        for (int kj = 0; kj < s; ++kj) {
          const S* row = y.data() + static_cast<std::size_t>((oc * s + ki) * s + kj) * hw;
          for (int yy = 0; yy < h; ++yy)
            for (int xx = 0; xx < w; ++xx)
              dst[static_cast<std::size_t>(yy * s + ki) * ow + xx * s + kj] = row[yy * w + xx] + bias;
        }
    }
  }
  const bool rg = t.requires_grad(xv) || t.requires_grad(wv) || t.requires_grad(bv);
  if (!rg) return t.push(std::move(out), false, nullptr);
  Var ov{static_cast<int>(t.size())};
  return t.push(std::move(out), true, [=](Tape<S>& tp) {
    const auto& x = tp.value(xv);
    const auto& wt = tp.value(wv);
    const auto& g = tp.grad(ov);
    CMapM<S> wm(wt.data.data(), c, oss);
    Mat<S> gy(oss, hw);
    for (int i = 0; i < n; ++i) {
      for (int oc = 0; oc < o; ++oc) {
        const S* src = g.slice(i, oc);
        S bsum = 0;
        for (int ki = 0; ki < s; ++ki)
          for (int kj = 0; kj < s; ++kj) {
            S* row = gy.data() + static_cast<std::size_t>((oc * s + ki) * s + kj) * hw;
            for (int yy = 0; yy < h; ++yy)
              for (int xx = 0; xx < w; ++xx) {
                row[yy * w + xx] = src[static_cast<std::size_t>(yy * s + ki) * ow + xx * s + kj];
                bsum += row[yy * w + xx];
              }
          }
        if (tp.requires_grad(bv)) tp.grad(bv).data[oc] += bsum;
      }
      if (tp.requires_grad(wv)) {
        MapM<S>(tp.grad(wv).data.data(), c, oss).noalias() +=
            CMapM<S>(x.slice(i), c, hw) * gy.transpose();
      }
      if (tp.requires_grad(xv)) MapM<S>(tp.grad(xv).slice(i), c, hw).noalias() += wm * gy;
    }
  });
}

template <typename S>
Var upsample_nearest(Tape<S>& t, Var xv, int f) {
  const auto& x = t.value(xv);
  if (f < 1) throw DataError("upsample_nearest: factor must be >= 1");
  const int h = x.h(), w = x.w();
  Tensor<S> out(x.n(), x.c(), h * f, w * f);
  for (int i = 0; i < x.n(); ++i)
    for (int ch = 0; ch < x.c(); ++ch) {
      const S* src = x.slice(i, ch);
      S* dst = out.slice(i, ch);
      for (int r = 0; r < h * f; ++r)
        for (int c = 0; c < w * f; ++c) dst[static_cast<std::size_t>(r) * w * f + c] = src[(r / f) * w + c / f];
    }
  if (!t.requires_grad(xv)) return t.push(std::move(out), false, nullptr);
  Var ov{static_cast<int>(t.size())};
  return t.push(std::move(out), true, [=](Tape<S>& tp) {
    const auto& g = tp.grad(ov);
    auto& dx = tp.grad(xv);
    for (int i = 0; i < g.n(); ++i)
      for (int ch = 0; ch < g.c(); ++ch) {
        const S* src = g.slice(i, ch);
        S* dst = dx.slice(i, ch);
        for (int r = 0; r < h * f; ++r)
          for (int c = 0; c < w * f; ++c) dst[(r / f) * w + c / f] += src[static_cast<std::size_t>(r) * w * f + c];
      }
  });
}

template <typename S>
Var maxpool2d(Tape<S>& t, Var xv, int k) {
  const auto& x = t.value(xv);
  if (k < 1 || x.h() % k || x.w() % k) {
    throw DataError("maxpool2d: " + shape_string(x.shape) + " not divisible by " + std::to_string(k));
  }
  const int oh = x.h() / k, ow = x.w() / k;
  Tensor<S> out(x.n(), x.c(), oh, ow);
  std::vector<int> arg(out.numel());
  std::size_t oi = 0;
  for (int i = 0; i < x.n(); ++i)
    for (int ch = 0; ch < x.c(); ++ch) {
      const S* src = x.slice(i, ch);
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx, ++oi) {
          int best = (yy * k) * x.w() + xx * k;
          for (int a = 0; a < k; ++a)
            for (int bb = 0; bb < k; ++bb) {
              const int idx = (yy * k + a) * x.w() + xx * k + bb;
              if (src[idx] > src[best]) best = idx;
            }
          out.data[oi] = src[best];
          arg[oi] = best;
        }
    }
  if (!t.requires_grad(xv)) return t.push(std::move(out), false, nullptr);
  Var ov{static_cast<int>(t.size())};
  return t.push(std::move(out), true, [=, arg = std::move(arg)](Tape<S>& tp) {
    const auto& g = tp.grad(ov);
    auto& dx = tp.grad(xv);
    const std::size_t in_plane = dx.plane();
    const std::size_t out_plane = g.plane();
    for (std::size_t p = 0; p < g.numel(); ++p) {
      dx.data[(p / out_plane) * in_plane + arg[p]] += g.data[p];
    }
  });
}

template <typename S>
Var relu(Tape<S>& t, Var xv) {
  const auto& x = t.value(xv);
  Tensor<S> out(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) out.data[i] = x.data[i] > S(0) ? x.data[i] : S(0);
  if (!t.requires_grad(xv)) return t.push(std::move(out), false, nullptr);
  Var ov{static_cast<int>(t.size())};
  return t.push(std::move(out), true, [=](Tape<S>& tp) {
    const auto& x = tp.value(xv);
    const auto& g = tp.grad(ov);
    auto& dx = tp.grad(xv);
    for (std::size_t i = 0; i < x.numel(); ++i)
      if (x.data[i] > S(0)) dx.data[i] += g.data[i];
  });
}

template <typename S>
Var sigmoid(Tape<S>& t, Var xv) {
  const auto& x = t.value(xv);
  Tensor<S> out(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) out.data[i] = S(1) / (S(1) + std::exp(-x.data[i]));
  if (!t.requires_grad(xv)) return t.push(std::move(out), false, nullptr);
  Var ov{static_cast<int>(t.size())};
  return t.push(std::move(out), true, [=](Tape<S>& tp) {
    const auto& y = tp.value(ov);
    const auto& g = tp.grad(ov);
    auto& dx = tp.grad(xv);
    for (std::size_t i = 0; i < y.numel(); ++i) dx.data[i] += g.data[i] * y.data[i] * (S(1) - y.data[i]);
  });
}

template <typename S>
Var concat_channels(Tape<S>& t, Var av, Var bv) {
  const auto& a = t.value(av);
  const auto& b = t.value(bv);
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
    shape_error("concat_channels", shape_string(a.shape) + " + " + shape_string(b.shape));
  }
  Tensor<S> out(a.n(), a.c() + b.c(), a.h(), a.w());
  const std::size_t ca = a.c() * a.plane(), cb = b.c() * b.plane();
  for (int i = 0; i < a.n(); ++i) {
    std::copy_n(a.slice(i), ca, out.slice(i));
    std::copy_n(b.slice(i), cb, out.slice(i, a.c()));
  }
  if (!t.requires_grad(av) && !t.requires_grad(bv)) return t.push(std::move(out), false, nullptr);
  Var ov{static_cast<int>(t.size())};
  const int ac = a.c();
  return t.push(std::move(out), true, [=](Tape<S>& tp) {
    const auto& g = tp.grad(ov);
    for (int i = 0; i < g.n(); ++i) {
      if (tp.requires_grad(av)) {
        S* d = tp.grad(av).slice(i);
        const S* s = g.slice(i);
        for (std::size_t j = 0; j < ca; ++j) d[j] += s[j];
      }
      if (tp.requires_grad(bv)) {
        S* d = tp.grad(bv).slice(i);
        const S* s = g.slice(i, ac);
        for (std::size_t j = 0; j < cb; ++j) d[j] += s[j];
      }
    }
  });
}

template <typename S>
Var batch_stats_norm(Tape<S>& t, Var xv, Var gv, Var bv, S eps, BatchStats<S>* stats) {
  const auto& x = t.value(xv);
  const int n = x.n(), c = x.c();
  const std::size_t plane = x.plane();
  if (t.value(gv).numel() != static_cast<std::size_t>(c) || t.value(bv).numel() != static_cast<std::size_t>(c)) {
    shape_error("batch_stats_norm", "scale/shift");
  }
  const double m = static_cast<double>(n) * plane;
  std::vector<S> mean(c), invstd(c), var(c);
  Tensor<S> xhat(x.shape);
  Tensor<S> out(x.shape);
  for (int ch = 0; ch < c; ++ch) {
    double s = 0;
    for (int i = 0; i < n; ++i) {
      const S* p = x.slice(i, ch);
      for (std::size_t j = 0; j < plane; ++j) s += p[j];
    }
    const double mu = s / m;
    double ss = 0;
    for (int i = 0; i < n; ++i) {
      const S* p = x.slice(i, ch);
      for (std::size_t j = 0; j < plane; ++j) ss += (p[j] - mu) * (p[j] - mu);
    }
    mean[ch] = static_cast<S>(mu);
    var[ch] = static_cast<S>(ss / m);
    invstd[ch] = static_cast<S>(1.0 / std::sqrt(ss / m + static_cast<double>(eps)));
    const S gm = t.value(gv).data[ch], bt = t.value(bv).data[ch];
    for (int i = 0; i < n; ++i) {
      const S* p = x.slice(i, ch);
      S* xh = xhat.slice(i, ch);
      S* o = out.slice(i, ch);
      for (std::size_t j = 0; j < plane; ++j) {
        xh[j] = (p[j] - mean[ch]) * invstd[ch];
        o[j] = gm * xh[j] + bt;
      }
    }
  }
  if (stats) *stats = {mean, var, static_cast<long>(m)};
  const bool rg = t.requires_grad(xv) || t.requires_grad(gv) || t.requires_grad(bv);
  if (!rg) return t.push(std::move(out), false, nullptr);
  Var ov{static_cast<int>(t.size())};
  return t.push(std::move(out), true, [=, xhat = std::move(xhat)](Tape<S>& tp) {
    const auto& g = tp.grad(ov);
    for (int ch = 0; ch < c; ++ch) {
      double sum_g = 0, sum_gx = 0;
      for (int i = 0; i < n; ++i) {
        const S* gp = g.slice(i, ch);
        const S* xh = xhat.slice(i, ch);
        for (std::size_t j = 0; j < plane; ++j) {
          sum_g += gp[j];
          sum_gx += gp[j] * xh[j];
        }
      }
      if (tp.requires_grad(gv)) tp.grad(gv).data[ch] += static_cast<S>(sum_gx);
      if (tp.requires_grad(bv)) tp.grad(bv).data[ch] += static_cast<S>(sum_g);
      if (tp.requires_grad(xv)) {
        const S gm = tp.value(gv).data[ch];
        const S k = gm * invstd[ch];
        const S mg = static_cast<S>(sum_g / m), mgx = static_cast<S>(sum_gx / m);
        for (int i = 0; i < n; ++i) {
          const S* gp = g.slice(i, ch);
          const S* xh = xhat.slice(i, ch);
          S* dx = tp.grad(xv).slice(i, ch);
          for (std::size_t j = 0; j < plane; ++j) dx[j] += k * (gp[j] - mg - xh[j] * mgx);
        }
      }
    }
  });
}

template <typename S>
Var fixed_stats_norm(Tape<S>& t, Var xv, Var gv, Var bv, const std::vector<S>& mean,
                     const std::vector<S>& var, S eps) {
  const auto& x = t.value(xv);
  const int c = x.c();
  if (mean.size() != static_cast<std::size_t>(c) || var.size() != static_cast<std::size_t>(c)) {
    shape_error("fixed_stats_norm", "statistics");
  }
  std::vector<S> scale(c), shift(c);
  for (int ch = 0; ch < c; ++ch) {
    scale[ch] = t.value(gv).data[ch] / std::sqrt(var[ch] + eps);
    shift[ch] = t.value(bv).data[ch] - mean[ch] * scale[ch];
  }
  Tensor<S> out(x.shape);
  for (int i = 0; i < x.n(); ++i)
    for (int ch = 0; ch < c; ++ch) {
      const S* p = x.slice(i, ch);
      S* o = out.slice(i, ch);
      for (std::size_t j = 0; j < x.plane(); ++j) o[j] = p[j] * scale[ch] + shift[ch];
    }
  if (!t.requires_grad(xv) && !t.requires_grad(gv) && !t.requires_grad(bv)) {
    return t.push(std::move(out), false, nullptr);
  }
  Var ov{static_cast<int>(t.size())};
  return t.push(std::move(out), true, [=](Tape<S>& tp) {
    const auto& x = tp.value(xv);
    const auto& g = tp.grad(ov);
    for (int ch = 0; ch < c; ++ch) {
      const S invstd = S(1) / std::sqrt(var[ch] + eps);
      S sum_g = 0, sum_gx = 0;
      for (int i = 0; i < g.n(); ++i) {
        const S* gp = g.slice(i, ch);
        const S* xp = x.slice(i, ch);
        for (std::size_t j = 0; j < g.plane(); ++j) {
          sum_g += gp[j];
          sum_gx += gp[j] * (xp[j] - mean[ch]) * invstd;
        }
        if (tp.requires_grad(xv)) {
          S* d = tp.grad(xv).slice(i, ch);
          for (std::size_t j = 0; j < g.plane(); ++j) d[j] += gp[j] * scale[ch];
        }
      }
      if (tp.requires_grad(gv)) tp.grad(gv).data[ch] += sum_gx;
      if (tp.requires_grad(bv)) tp.grad(bv).data[ch] += sum_g;
    }
  });
}

template <typename S>
Var masked_polygon_bce(Tape<S>& t, Var pv, const Tensor<S>& label, const Tensor<S>& pid,
                       LossWeighting weighting) {
  const auto& p = t.value(pv);
  if (p.shape != label.shape || p.shape != pid.shape) {
    shape_error("masked_polygon_bce", shape_string(p.shape) + " vs " + shape_string(label.shape));
  }
  const S lo = static_cast<S>(kBceClip), hi = S(1) - static_cast<S>(kBceClip);
  // per-pixel weight; group key = (batch item, polygon id)
  std::map<std::pair<int, long>, long> counts;
  const std::size_t per_item = p.numel() / std::max(1, p.n());
  long labelled = 0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    if (label.data[i] < S(0)) continue;
    ++labelled;
    ++counts[{static_cast<int>(i / per_item), std::lround(static_cast<double>(pid.data[i]))}];
  }
  if (labelled == 0) throw DataError("masked_polygon_bce: no labelled pixels");
  std::vector<S> weight(p.numel(), S(0));
  for (std::size_t i = 0; i < p.numel(); ++i) {
    if (label.data[i] < S(0)) continue;
    if (weighting == LossWeighting::per_pixel) {
      weight[i] = static_cast<S>(1.0 / labelled);
    } else {
      const long n = counts[{static_cast<int>(i / per_item), std::lround(static_cast<double>(pid.data[i]))}];
      weight[i] = static_cast<S>(1.0 / (static_cast<double>(counts.size()) * n));
    }
  }
  // polygon means first, then the mean over polygons
  std::map<std::pair<int, long>, double> sums;
  double total = 0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    if (label.data[i] < S(0)) continue;
    const S q = std::clamp(p.data[i], lo, hi);
    const S bce = label.data[i] > S(0.5) ? -std::log(q) : -std::log(S(1) - q);
    total += bce;
    sums[{static_cast<int>(i / per_item), std::lround(static_cast<double>(pid.data[i]))}] += bce;
  }
  double loss = 0;
  if (weighting == LossWeighting::per_pixel) {
    loss = total / static_cast<double>(labelled);
  } else {
    for (const auto& [key, s] : sums) loss += s / static_cast<double>(counts.at(key));
    loss /= static_cast<double>(counts.size());
  }
  if (!std::isfinite(loss)) throw NumericError("masked_polygon_bce: non-finite loss");
  Tensor<S> out(1, 1, 1, 1, static_cast<S>(loss));
  if (!t.requires_grad(pv)) return t.push(std::move(out), false, nullptr);
  Var ov{static_cast<int>(t.size())};
  return t.push(std::move(out), true, [=, weight = std::move(weight), label = label](Tape<S>& tp) {
    const S g = tp.grad(ov).data[0];
    const auto& p = tp.value(pv);
    auto& dp = tp.grad(pv);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      if (weight[i] == S(0)) continue;
      const S q = p.data[i];
      if (q <= lo || q >= hi) continue;  // clipped: zero slope
      const S d = label.data[i] > S(0.5) ? -S(1) / q : S(1) / (S(1) - q);
      dp.data[i] += g * weight[i] * d;
    }
  });
}

template <typename S>
Var weighted_sum(Tape<S>& t, Var xv, const Tensor<S>& coeff) {
  const auto& x = t.value(xv);
  if (x.shape != coeff.shape) shape_error("weighted_sum", shape_string(x.shape));
  double s = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) s += static_cast<double>(x.data[i]) * coeff.data[i];
  Tensor<S> out(1, 1, 1, 1, static_cast<S>(s));
  if (!t.requires_grad(xv)) return t.push(std::move(out), false, nullptr);
  Var ov{static_cast<int>(t.size())};
  return t.push(std::move(out), true, [=, coeff = coeff](Tape<S>& tp) {
    const S g = tp.grad(ov).data[0];
    auto& dx = tp.grad(xv);
    for (std::size_t i = 0; i < dx.numel(); ++i) dx.data[i] += g * coeff.data[i];
  });
}

#define P2S_INSTANTIATE(S)                                                                      \
  template class Tape<S>;                                                                       \
  template Var conv2d<S>(Tape<S>&, Var, Var, Var);                                              \
  template Var conv_transpose2d<S>(Tape<S>&, Var, Var, Var, int);                               \
  template Var maxpool2d<S>(Tape<S>&, Var, int);                                                \
  template Var upsample_nearest<S>(Tape<S>&, Var, int);                                         \
  template Var relu<S>(Tape<S>&, Var);                                                          \
  template Var sigmoid<S>(Tape<S>&, Var);                                                       \
  template Var concat_channels<S>(Tape<S>&, Var, Var);                                          \
  template Var batch_stats_norm<S>(Tape<S>&, Var, Var, Var, S, BatchStats<S>*);                 \
  template Var fixed_stats_norm<S>(Tape<S>&, Var, Var, Var, const std::vector<S>&,              \
                                   const std::vector<S>&, S);                                   \
  template Var masked_polygon_bce<S>(Tape<S>&, Var, const Tensor<S>&, const Tensor<S>&,         \
                                     LossWeighting);                                            \
  template Var weighted_sum<S>(Tape<S>&, Var, const Tensor<S>&);

P2S_INSTANTIATE(float)
P2S_INSTANTIATE(double)

#undef P2S_INSTANTIATE

}  // namespace p2s::nn
