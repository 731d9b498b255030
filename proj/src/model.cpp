#include "p2s/model.hpp"

#include "io_util.hpp"
#include "p2s/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <thread>

namespace p2s {

using nlohmann::json;
using nn::Tape;
using nn::Tensor;
using nn::Var;

std::string to_string(Variant v) { return v == Variant::wassernetz ? "wassernetz" : "unet_single"; }

Variant variant_from_string(const std::string& s) {
  if (s == "wassernetz") return Variant::wassernetz;
  if (s == "unet_single") return Variant::unet_single;
  throw ConfigError("unknown model variant '" + s + "'");
}

int NetConfig::optical_px() const { return static_cast<int>(std::lround(footprint_m / optical_px_m)); }
int NetConfig::terrain_px() const { return static_cast<int>(std::lround(footprint_m / terrain_px_m)); }
int NetConfig::output_px() const { return static_cast<int>(std::lround(footprint_m / output_px_m)); }

namespace {

constexpr float kNormEps = 1e-5f;
constexpr float kMomentum = 0.1f;

int ratio(double a, double b) {
  if (!is_multiple(a, b)) return 0;
  return static_cast<int>(std::lround(a / b));
}

// Upsampling stages of the head, in order.
std::vector<int> head_factors(const NetConfig& c, Variant v) {
  const int total = ratio(c.optical_px_m, c.output_px_m);
  if (total < 1) throw ConfigError("optical_px_m must be an integer multiple of output_px_m");
  std::vector<int> f;
  int rest = total;
  if (v == Variant::wassernetz) {
    const int rt = ratio(c.optical_px_m, c.terrain_px_m);
    if (rt < 1 || total % rt != 0) {
      throw ConfigError("terrain_px_m must divide optical_px_m, and output_px_m must divide terrain_px_m");
    }
    if (rt > 1) f.push_back(rt);
    rest = total / rt;
  }
  while (rest % 3 == 0) {
    f.push_back(3);
    rest /= 3;
  }
  while (rest % 2 == 0) {
    f.push_back(2);
    rest /= 2;
  }
  if (rest != 1) throw ConfigError("head upsampling factor must be a product of 2s and 3s");
  return f;
}

}  // namespace

void validate(const NetConfig& c, Variant v) {
  if (c.optical_channels < 1) throw ConfigError("optical_channels must be >= 1");
  if (v == Variant::wassernetz && c.terrain_channels < 1) throw ConfigError("terrain_channels must be >= 1");
  if (c.base_channels < 1) throw ConfigError("base_channels must be >= 1");
  if (c.encoder_levels < 1) throw ConfigError("encoder_levels must be >= 1");
  if (!(c.footprint_m > 0) || !(c.optical_px_m > 0) || !(c.terrain_px_m > 0) || !(c.output_px_m > 0)) {
    throw ConfigError("footprint and pixel sizes must be positive");
  }
  for (double px : {c.optical_px_m, c.terrain_px_m, c.output_px_m}) {
    if (!is_multiple(c.footprint_m, px)) throw ConfigError("footprint_m must be divisible by every pixel size");
  }
  const int div = 1 << c.encoder_levels;
  if (c.optical_px() % div != 0) {
    throw ConfigError("footprint in optical pixels (" + std::to_string(c.optical_px()) +
                      ") must be divisible by 2^encoder_levels");
  }
  head_factors(c, v);
}

namespace {

template <typename S>
struct Net {
  Tape<S>& t;
  Model& m;
  Mode mode;
  ParamVars* vars;
  bool track;
  std::mt19937_64* init;  // non-null while building

  Var param(const std::string& name, std::array<int, 4> shape, int fan_in, float fill) {
    if (vars) {
      auto pre = vars->find(name);
      if (pre != vars->end()) {
        if (t.value(pre->second).shape != shape) throw DataError("override for '" + name + "' has the wrong shape");
        return pre->second;
      }
    }
    auto it = m.params.find(name);
    if (it == m.params.end()) {
      if (!init) throw DataError("model has no parameter '" + name + "'");
      Tensor<float> p(shape, fill);
      if (fan_in > 0) {
        const double bound = std::sqrt(6.0 / fan_in);
        std::uniform_real_distribution<double> u(-bound, bound);
        for (float& x : p.data) x = static_cast<float>(u(*init));
      }
      it = m.params.emplace(name, std::move(p)).first;
      m.order.push_back(name);
    } else if (it->second.shape != shape) {
      throw DataError("parameter '" + name + "' has shape " + nn::shape_string(it->second.shape) + ", expected " +
                      nn::shape_string(shape));
    }
    Var v = t.leaf(nn::cast<S>(it->second), track);
    if (vars) (*vars)[name] = v;
    return v;
  }

  Tensor<float>& buffer(const std::string& name, int c, float fill) {
    auto it = m.buffers.find(name);
    if (it == m.buffers.end()) {
      if (!init) throw DataError("model has no buffer '" + name + "'");
      it = m.buffers.emplace(name, Tensor<float>(1, c, 1, 1, fill)).first;
    }
    return it->second;
  }

  Var conv(const std::string& name, Var x, int out, int k) {
    const int in = t.value(x).c();
    Var w = param(name + ".weight", {out, in, k, k}, in * k * k, 0.0f);
    Var b = param(name + ".bias", {1, out, 1, 1}, 0, 0.0f);
    return nn::conv2d(t, x, w, b);
  }

  Var norm(const std::string& name, Var x) {
    const int c = t.value(x).c();
    Var g = param(name + ".gamma", {1, c, 1, 1}, 0, 1.0f);
    Var b = param(name + ".beta", {1, c, 1, 1}, 0, 0.0f);
    auto& rm = buffer(name + ".running_mean", c, 0.0f);
    auto& rv = buffer(name + ".running_var", c, 1.0f);
    if (mode == Mode::eval) {
      std::vector<S> mean(rm.data.begin(), rm.data.end()), var(rv.data.begin(), rv.data.end());
      return nn::fixed_stats_norm(t, x, g, b, mean, var, static_cast<S>(kNormEps));
    }
    nn::BatchStats<S> st;
    Var y = nn::batch_stats_norm(t, x, g, b, static_cast<S>(kNormEps), &st);
    const double unbias = st.count > 1 ? static_cast<double>(st.count) / (st.count - 1) : 1.0;
    for (int i = 0; i < c; ++i) {
      rm.data[i] = (1 - kMomentum) * rm.data[i] + kMomentum * static_cast<float>(st.mean[i]);
      rv.data[i] = (1 - kMomentum) * rv.data[i] + kMomentum * static_cast<float>(st.var[i] * unbias);
    }
    return y;
  }

  Var block(const std::string& name, Var x, int ch, int k = 3) {
    x = nn::relu(t, norm(name + ".bn1", conv(name + ".conv1", x, ch, k)));
    return nn::relu(t, norm(name + ".bn2", conv(name + ".conv2", x, ch, k)));
  }

  Var up(const std::string& name, Var x, int ch, int s) {
    const int in = t.value(x).c();
    Var w = param(name + ".weight", {in, ch, s, s}, in, 0.0f);
    Var b = param(name + ".bias", {1, ch, 1, 1}, 0, 0.0f);
    return nn::relu(t, norm(name + ".bn", nn::conv_transpose2d(t, x, w, b, s)));
  }

  Var run(const Tensor<S>& optical, const Tensor<S>& terrain) {
    const NetConfig& c = m.config;
    const int B = c.base_channels;
    const int opx = c.optical_px();
    if (optical.c() != c.optical_channels || optical.h() != opx || optical.w() != opx) {
      throw DataError("optical input " + nn::shape_string(optical.shape) + " does not match the model (C=" +
                      std::to_string(c.optical_channels) + ", " + std::to_string(opx) + " px)");
    }
    Var x;
    Var terrain_full{-1};
    int terrain_res = 0;
    if (m.variant == Variant::wassernetz) {
      const int tpx = c.terrain_px();
      if (terrain.c() != c.terrain_channels || terrain.h() != tpx || terrain.w() != tpx ||
          terrain.n() != optical.n()) {
        throw DataError("terrain input " + nn::shape_string(terrain.shape) + " does not match the model");
      }
      Var o = block("optical", t.leaf(optical), B);
      terrain_full = block("terrain.full", t.leaf(terrain), B);
      terrain_res = tpx;
      const int rt = tpx / opx;
      Var tp = rt > 1 ? nn::maxpool2d(t, terrain_full, rt) : terrain_full;
      tp = block("terrain.pooled", tp, B);
      x = nn::concat_channels(t, o, tp);
    } else {
      x = block("input", t.leaf(optical), B);
    }
    std::vector<Var> skips;
    for (int i = 0; i < c.encoder_levels; ++i) {
      x = block("enc" + std::to_string(i), x, B << i);
      skips.push_back(x);
      x = nn::maxpool2d(t, x, 2);
    }
    x = block("bottleneck", x, B << c.encoder_levels);
    for (int i = c.encoder_levels - 1; i >= 0; --i) {
      x = nn::upsample_nearest(t, x, 2);
      x = nn::relu(t, norm("up" + std::to_string(i) + ".bn", conv("up" + std::to_string(i) + ".conv", x, B << i, 3)));
      x = nn::concat_channels(t, x, skips[i]);
      x = block("dec" + std::to_string(i), x, B << i);
    }
    // After upsampling only 1x1 convolutions run, so a constant input tile
    // yields an output that is periodic in the optical pixel and tiles blend
    // seamlessly.
    const auto factors = head_factors(c, m.variant);
    for (std::size_t j = 0; j < factors.size(); ++j) {
      x = up("head" + std::to_string(j), x, B, factors[j]);
      if (terrain_full.id >= 0 && t.value(x).h() == terrain_res) {
        x = block("head.terrain", nn::concat_channels(t, x, terrain_full), B, 1);
        terrain_full = Var{-1};
      }
    }
    if (terrain_full.id >= 0) {
      x = block("head.terrain", nn::concat_channels(t, x, terrain_full), B, 1);
    }
    return nn::sigmoid(t, conv("out", x, 1, 1));
  }
};

template <typename S>
Var forward_impl(Tape<S>& t, Model& m, const Tensor<S>& optical, const Tensor<S>& terrain, Mode mode,
                 ParamVars* vars, bool track, std::mt19937_64* init) {
  Net<S> net{t, m, mode, vars, track, init};
  return net.run(optical, terrain);
}

}  // namespace

template <typename S>
Var forward(Tape<S>& t, Model& m, const Tensor<S>& optical, const Tensor<S>& terrain, Mode mode, ParamVars* vars,
            bool track_grad) {
  return forward_impl(t, m, optical, terrain, mode, vars, track_grad, nullptr);
}

template Var forward<float>(Tape<float>&, Model&, const Tensor<float>&, const Tensor<float>&, Mode, ParamVars*,
                            bool);
template Var forward<double>(Tape<double>&, Model&, const Tensor<double>&, const Tensor<double>&, Mode,
                             ParamVars*, bool);

Model build_model(const NetConfig& cfg, Variant variant) {
  validate(cfg, variant);
  Model m;
  m.config = cfg;
  m.variant = variant;
  std::mt19937_64 rng(cfg.seed);
  Tape<float> t;
  Tensor<float> opt(1, cfg.optical_channels, cfg.optical_px(), cfg.optical_px());
  Tensor<float> ter;
  if (variant == Variant::wassernetz) ter = Tensor<float>(1, cfg.terrain_channels, cfg.terrain_px(), cfg.terrain_px());
  forward_impl(t, m, opt, ter, Mode::train, nullptr, false, &rng);
  for (auto& [name, b] : m.buffers) {
    const bool is_var = name.size() > 4 && name.compare(name.size() - 4, 4, "_var") == 0;
    std::fill(b.data.begin(), b.data.end(), is_var ? 1.0f : 0.0f);
  }
  return m;
}

// ---- weights file --------------------------------------------------------------

namespace {

constexpr const char* kWeightsMagic = "P2S-W1";

json config_json(const NetConfig& c) {
  return {{"optical_channels", c.optical_channels}, {"terrain_channels", c.terrain_channels},
          {"base_channels", c.base_channels},       {"encoder_levels", c.encoder_levels},
          {"footprint_m", c.footprint_m},           {"optical_px_m", c.optical_px_m},
          {"terrain_px_m", c.terrain_px_m},         {"output_px_m", c.output_px_m},
          {"seed", c.seed}};
}

json norm_json(const Standardization& s) { return {{"mean", s.mean}, {"std", s.stddev}}; }

}  // namespace

void save_model(const Model& m, const std::filesystem::path& path) {
  json manifest = json::array();
  for (const auto& name : m.order) manifest.push_back({{"name", name}, {"kind", "parameter"}, {"shape", m.params.at(name).shape}});
  for (const auto& [name, b] : m.buffers) manifest.push_back({{"name", name}, {"kind", "buffer"}, {"shape", b.shape}});
  json h = {{"magic", kWeightsMagic},
            {"variant", to_string(m.variant)},
            {"config", config_json(m.config)},
            {"tensors", manifest},
            {"normalization", {{"optical", norm_json(m.optical_norm)}, {"terrain", norm_json(m.terrain_norm)}}}};
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write model '" + path.string() + "'");
  f << h.dump() << '\n';
  for (const auto& name : m.order) detail::write_le_floats(f, m.params.at(name).data);
  for (const auto& [name, b] : m.buffers) detail::write_le_floats(f, b.data);
  if (!f) throw DataError("write failed for model '" + path.string() + "'");
}

Model load_model(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path, "model");
  const auto eol = bytes.find('\n');
  if (eol == std::string::npos) throw DataError("P2S-W1 header is not newline terminated");
  Model m;
  std::size_t offset = eol + 1;
  try {
    const json h = json::parse(bytes.substr(0, eol));
    if (h.value("magic", "") != kWeightsMagic) throw DataError("unsupported model format: bad magic");
    m.variant = variant_from_string(h.at("variant").get<std::string>());
    const json& c = h.at("config");
    NetConfig& cfg = m.config;
    cfg.optical_channels = c.at("optical_channels");
    cfg.terrain_channels = c.at("terrain_channels");
    cfg.base_channels = c.at("base_channels");
    cfg.encoder_levels = c.at("encoder_levels");
    cfg.footprint_m = c.at("footprint_m");
    cfg.optical_px_m = c.at("optical_px_m");
    cfg.terrain_px_m = c.at("terrain_px_m");
    cfg.output_px_m = c.at("output_px_m");
    cfg.seed = c.at("seed");
    const json& n = h.at("normalization");
    m.optical_norm = {n.at("optical").at("mean"), n.at("optical").at("std")};
    m.terrain_norm = {n.at("terrain").at("mean"), n.at("terrain").at("std")};
    for (const json& e : h.at("tensors")) {
      const auto shape = e.at("shape").get<std::array<int, 4>>();
      Tensor<float> tsr(shape);
      const std::size_t nbytes = tsr.numel() * sizeof(float);
      if (offset + nbytes > bytes.size()) throw DataError("model payload is truncated");
      detail::read_le_floats(bytes.data() + offset, tsr.data);
      offset += nbytes;
      const std::string name = e.at("name");
      if (e.at("kind") == "parameter") {
        m.order.push_back(name);
        m.params.emplace(name, std::move(tsr));
      } else {
        m.buffers.emplace(name, std::move(tsr));
      }
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed P2S-W1 header: ") + e.what());
  }
  if (offset != bytes.size()) throw DataError("model payload size mismatch");
  validate(m.config, m.variant);
  // Check that the stored tensors are exactly the ones the architecture uses.
  Model probe = build_model(m.config, m.variant);
  if (probe.order != m.order) throw DataError("model parameters do not match the architecture");
  for (const auto& [name, p] : probe.params) {
    if (m.params.at(name).shape != p.shape) throw DataError("parameter '" + name + "' has the wrong shape");
  }
  return m;
}

// ---- data ----------------------------------------------------------------------

Tensor<float> to_tensor(const Raster& r) {
  Tensor<float> t(1, r.bands(), r.height(), r.width());
  t.data.assign(r.data().begin(), r.data().end());
  return t;
}

TrainExample make_example(const Raster& optical, const Raster* terrain, const std::vector<AnnotationPolygon>& polygons,
                          const GridSpec& target) {
  TrainExample ex;
  ex.optical = to_tensor(optical);
  if (terrain) ex.terrain = to_tensor(*terrain);
  const Rasterized rz = rasterize_polygons(polygons, target);
  ex.label = Tensor<float>(1, 1, target.height, target.width, -1.0f);
  ex.polygon_id = Tensor<float>(1, 1, target.height, target.width, 0.0f);
  bool any = false;
  for (std::size_t i = 0; i < rz.label.data().size(); ++i) {
    if (rz.label.data()[i] == rz.label.nodata()) continue;
    ex.label.data[i] = rz.label.data()[i];
    ex.polygon_id.data[i] = rz.polygon_id.data()[i];
    any = true;
  }
  if (!any) throw DataError("training example has no labelled pixels");
  return ex;
}

namespace {

Standardization fit(const std::vector<const Tensor<float>*>& xs, float nodata) {
  Standardization s;
  if (xs.empty()) return s;
  const int c = xs.front()->c();
  s.mean.assign(c, 0.0f);
  s.stddev.assign(c, 1.0f);
  for (int ch = 0; ch < c; ++ch) {
    double sum = 0, sq = 0;
    long n = 0;
    for (const auto* x : xs) {
      for (int i = 0; i < x->n(); ++i) {
        const float* p = x->slice(i, ch);
        for (std::size_t j = 0; j < x->plane(); ++j) {
          if (p[j] == nodata) continue;
          sum += p[j];
          sq += static_cast<double>(p[j]) * p[j];
          ++n;
        }
      }
    }
    if (n == 0) continue;
    const double mean = sum / n;
    const double var = std::max(0.0, sq / n - mean * mean);
    s.mean[ch] = static_cast<float>(mean);
    s.stddev[ch] = var > 1e-12 ? static_cast<float>(std::sqrt(var)) : 1.0f;
  }
  return s;
}

}  // namespace

void fit_standardization(Model& m, const std::vector<TrainExample>& data) {
  std::vector<const Tensor<float>*> opt, ter;
  for (const auto& ex : data) {
    opt.push_back(&ex.optical);
    if (m.uses_terrain()) ter.push_back(&ex.terrain);
  }
  m.optical_norm = fit(opt, kDefaultNodata);
  m.terrain_norm = fit(ter, kDefaultNodata);
}

Tensor<float> standardize(const Tensor<float>& x, const Standardization& s, float nodata) {
  if (s.mean.size() != static_cast<std::size_t>(x.c())) {
    throw DataError("standardisation has " + std::to_string(s.mean.size()) + " bands, input has " +
                    std::to_string(x.c()));
  }
  Tensor<float> out(x.shape);
  for (int i = 0; i < x.n(); ++i)
    for (int ch = 0; ch < x.c(); ++ch) {
      const float* p = x.slice(i, ch);
      float* o = out.slice(i, ch);
      for (std::size_t j = 0; j < x.plane(); ++j) {
        if (p[j] == nodata) {
          o[j] = 0.0f;
        } else if (!std::isfinite(p[j])) {
          throw DataError("non-finite input value in band " + std::to_string(ch));
        } else {
          o[j] = (p[j] - s.mean[ch]) / s.stddev[ch];
        }
      }
    }
  return out;
}

namespace {

// Concatenates (1,C,H,W) tensors along N.
Tensor<float> batch_of(const std::vector<const Tensor<float>*>& xs) {
  Tensor<float> out(static_cast<int>(xs.size()), xs[0]->c(), xs[0]->h(), xs[0]->w());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i]->shape != xs[0]->shape) throw DataError("examples in a batch differ in shape");
    std::copy(xs[i]->data.begin(), xs[i]->data.end(), out.slice(static_cast<int>(i)));
  }
  return out;
}

Tensor<float> flipped(const Tensor<float>& x, bool horizontal, bool vertical) {
  if (!horizontal && !vertical) return x;
  Tensor<float> out(x.shape);
  for (int i = 0; i < x.n(); ++i)
    for (int c = 0; c < x.c(); ++c)
      for (int r = 0; r < x.h(); ++r)
        for (int col = 0; col < x.w(); ++col)
          out.at(i, c, vertical ? x.h() - 1 - r : r, horizontal ? x.w() - 1 - col : col) = x.at(i, c, r, col);
  return out;
}

struct Adam {
  double lr = 1e-3;
  double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  long step = 0;
  std::map<std::string, std::vector<double>> m, v;

  void update(Model& model, Tape<float>& t, const ParamVars& vars) {
    ++step;
    const double c1 = 1 - std::pow(b1, static_cast<double>(step));
    const double c2 = 1 - std::pow(b2, static_cast<double>(step));
    for (const auto& name : model.order) {
      auto it = vars.find(name);
      if (it == vars.end() || !t.has_grad(it->second)) continue;
      auto& p = model.params.at(name).data;
      const auto& g = t.grad(it->second).data;
      auto& mm = m[name];
      auto& vv = v[name];
      if (mm.empty()) {
        mm.assign(p.size(), 0.0);
        vv.assign(p.size(), 0.0);
      }
      for (std::size_t i = 0; i < p.size(); ++i) {
        mm[i] = b1 * mm[i] + (1 - b1) * g[i];
        vv[i] = b2 * vv[i] + (1 - b2) * static_cast<double>(g[i]) * g[i];
        p[i] -= static_cast<float>(lr * (mm[i] / c1) / (std::sqrt(vv[i] / c2) + eps));
        if (!std::isfinite(p[i])) {
          throw NumericError("parameter '" + name + "' became non-finite at optimiser step " + std::to_string(step));
        }
      }
    }
  }
};

}  // namespace

TrainHistory train(Model& m, const std::vector<TrainExample>& data, const TrainOptions& opts,
                   const std::vector<TrainExample>* validation) {
  if (data.empty()) throw DataError("training set is empty");
  if (opts.epochs < 1 || opts.batch_size < 1 || !(opts.learning_rate > 0)) {
    throw ConfigError("epochs, batch_size and learning_rate must be positive");
  }
  if (m.optical_norm.mean.empty()) fit_standardization(m, data);
  std::vector<TrainExample> prepared;
  prepared.reserve(data.size());
  for (const auto& ex : data) {
    TrainExample p;
    p.optical = standardize(ex.optical, m.optical_norm, opts.nodata);
    if (m.uses_terrain()) p.terrain = standardize(ex.terrain, m.terrain_norm, opts.nodata);
    p.label = ex.label;
    p.polygon_id = ex.polygon_id;
    prepared.push_back(std::move(p));
  }
  std::mt19937_64 rng(opts.seed);
  Adam adam;
  adam.lr = opts.learning_rate;
  TrainHistory hist;
  std::vector<std::size_t> order(prepared.size());
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
      const std::size_t end = std::min(order.size(), start + opts.batch_size);
      std::vector<const Tensor<float>*> o, te, l, p;
      std::vector<Tensor<float>> keep;
      keep.reserve(4 * (end - start));
      for (std::size_t k = start; k < end; ++k) {
        const TrainExample& ex = prepared[order[k]];
        bool h = false, v = false;
        if (opts.flips) {
          h = (rng() & 1u) != 0;
          v = (rng() & 1u) != 0;
        }
        keep.push_back(flipped(ex.optical, h, v));
        o.push_back(&keep.back());
        if (m.uses_terrain()) {
          keep.push_back(flipped(ex.terrain, h, v));
          te.push_back(&keep.back());
        }
        keep.push_back(flipped(ex.label, h, v));
        l.push_back(&keep.back());
        keep.push_back(flipped(ex.polygon_id, h, v));
        p.push_back(&keep.back());
      }
      Tape<float> t;
      ParamVars vars;
      const Tensor<float> ter = te.empty() ? Tensor<float>() : batch_of(te);
      Var pred = forward(t, m, batch_of(o), ter, Mode::train, &vars, true);
      Var loss;
      try {
        loss = nn::masked_polygon_bce(t, pred, batch_of(l), batch_of(p), opts.weighting);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches));
      }
      const double lv = t.value(loss).data[0];
      t.backward(loss);
      adam.update(m, t, vars);
      hist.step_loss.push_back(lv);
      sum += lv;
      ++batches;
    }
    hist.epoch_loss.push_back(sum / batches);
    if (validation) hist.validation_accuracy.push_back(pixel_accuracy(m, *validation, opts.nodata));
  }
  return hist;
}

Tensor<float> predict_tile(Model& m, const TrainExample& ex, float nodata) {
  Tape<float> t;
  const Tensor<float> opt = standardize(ex.optical, m.optical_norm, nodata);
  const Tensor<float> ter = m.uses_terrain() ? standardize(ex.terrain, m.terrain_norm, nodata) : Tensor<float>();
  Var y = forward(t, m, opt, ter, Mode::eval);
  return t.value(y);
}

double pixel_accuracy(Model& m, const std::vector<TrainExample>& data, float nodata) {
  long correct = 0, total = 0;
  for (const auto& ex : data) {
    const Tensor<float> p = predict_tile(m, ex, nodata);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      if (ex.label.data[i] < 0) continue;
      ++total;
      correct += (p.data[i] > 0.5f) == (ex.label.data[i] > 0.5f);
    }
  }
  return total ? static_cast<double>(correct) / total : 0.0;
}

// ---- scene inference -------------------------------------------------------------

namespace {

std::vector<double> tile_offsets(double extent, double footprint, double step_px) {
  double stride = std::floor(footprint / 2 / step_px + 1e-9) * step_px;
  if (stride < step_px) stride = step_px;
  std::vector<double> out;
  for (double p = 0; p + footprint < extent - 1e-9; p += stride) out.push_back(p);
  out.push_back(extent - footprint);
  return out;
}

std::vector<double> blend_weights(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * (i + 0.5) / n);
  return w;
}

}  // namespace

Raster predict_scene(Model& m, const std::vector<const Raster*>& optical_days, const Raster* terrain, int jobs) {
  if (optical_days.empty()) throw DataError("no optical scenes given");
  const Raster optical = optical_days.size() == 1 ? *optical_days[0] : stack_bands(optical_days);
  const NetConfig& c = m.config;
  if (optical.bands() != c.optical_channels) {
    throw DataError("optical stack has " + std::to_string(optical.bands()) + " bands, model expects " +
                    std::to_string(c.optical_channels));
  }
  if (!is_multiple(optical.pixel_size(), c.optical_px_m) || std::lround(optical.pixel_size() / c.optical_px_m) != 1) {
    throw DataError("optical pixel size does not match the model");
  }
  if (m.uses_terrain()) {
    if (!terrain) throw DataError("wassernetz inference needs a terrain stack");
    if (terrain->bands() != c.terrain_channels || std::abs(terrain->pixel_size() - c.terrain_px_m) > 1e-9) {
      throw DataError("terrain stack does not match the model");
    }
  }
  const double ext_x = optical.grid().extent_x(), ext_y = optical.grid().extent_y();
  if (ext_x < c.footprint_m - 1e-9 || ext_y < c.footprint_m - 1e-9) throw DataError("scene smaller than footprint");
  const auto& ot = optical.transform();
  const GridSpec out_grid{GeoTransform{ot.x_origin, ot.y_origin, c.output_px_m, ot.crs_tag},
                          static_cast<int>(std::lround(ext_x / c.output_px_m)),
                          static_cast<int>(std::lround(ext_y / c.output_px_m))};
  const int n = c.output_px();
  const auto w = blend_weights(n);
  std::vector<double> num(static_cast<std::size_t>(out_grid.width) * out_grid.height, 0.0);
  std::vector<double> den(num.size(), 0.0);

  struct Tile {
    double dx, dy;
    Tensor<float> prob;
  };
  std::vector<Tile> tiles;
  for (double dy : tile_offsets(ext_y, c.footprint_m, optical.pixel_size()))
    for (double dx : tile_offsets(ext_x, c.footprint_m, optical.pixel_size())) tiles.push_back({dx, dy, {}});

  auto run_tile = [&](Tile& tile) {
    const Point anchor{ot.x_origin + tile.dx, ot.y_origin - tile.dy};
    TrainExample ex;
    ex.optical = to_tensor(crop(optical, geo_window(optical, anchor, c.footprint_m)));
    if (m.uses_terrain()) {
      const Raster tt = crop(*terrain, geo_window(*terrain, anchor, c.footprint_m));
      ex.terrain = to_tensor(tt);
      for (float& v : ex.terrain.data)
        if (v == terrain->nodata()) v = kDefaultNodata;
    }
    for (float& v : ex.optical.data)
      if (v == optical.nodata()) v = kDefaultNodata;
    tile.prob = predict_tile(m, ex);
  };
  const int nj = std::max(1, jobs);
  for (std::size_t start = 0; start < tiles.size(); start += nj) {
    const std::size_t end = std::min(tiles.size(), start + nj);
    if (nj == 1) {
      run_tile(tiles[start]);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t k = start; k < end; ++k) pool.emplace_back([&, k] { run_tile(tiles[k]); });
      for (auto& th : pool) th.join();
    }
    // Accumulate in tile order so the result does not depend on `jobs`.
    for (std::size_t k = start; k < end; ++k) {
      Tile& tile = tiles[k];
      const int c0 = static_cast<int>(std::lround(tile.dx / c.output_px_m));
      const int r0 = static_cast<int>(std::lround(tile.dy / c.output_px_m));
      for (int r = 0; r < n; ++r)
        for (int col = 0; col < n; ++col) {
          const double wt = w[r] * w[col];
          const std::size_t idx = static_cast<std::size_t>(r0 + r) * out_grid.width + c0 + col;
          num[idx] += wt * tile.prob.data[static_cast<std::size_t>(r) * n + col];
          den[idx] += wt;
        }
      tile.prob = {};
    }
  }
  Raster out(out_grid, 1);
  const double ro = optical.pixel_size() / c.output_px_m;
  for (int r = 0; r < out_grid.height; ++r)
    for (int col = 0; col < out_grid.width; ++col) {
      bool nodata = false;
      const int orow = static_cast<int>(r / ro), ocol = static_cast<int>(col / ro);
      for (int b = 0; b < optical.bands() && !nodata; ++b) nodata = !optical.valid(b, orow, ocol);
      if (terrain && m.uses_terrain() && !nodata) {
        const double x = out_grid.transform.col_center_x(col), y = out_grid.transform.row_center_y(r);
        const int tc = static_cast<int>(std::floor((x - terrain->transform().x_origin) / terrain->pixel_size()));
        const int tr = static_cast<int>(std::floor((terrain->transform().y_origin - y) / terrain->pixel_size()));
        if (!terrain->in_bounds(tr, tc)) {
          nodata = true;
        } else {
          for (int b = 0; b < terrain->bands() && !nodata; ++b) nodata = !terrain->valid(b, tr, tc);
        }
      }
      const std::size_t idx = static_cast<std::size_t>(r) * out_grid.width + col;
      out(r, col) = nodata ? out.nodata() : static_cast<float>(num[idx] / den[idx]);
    }
  return out;
}

// ---- NDWI -------------------------------------------------------------------------

Raster ndwi(const Raster& green, const Raster& nir) {
  if (!(green.grid() == nir.grid()) || green.bands() != 1 || nir.bands() != 1) {
    throw DataError("ndwi: green and nir must be single-band rasters on the same grid");
  }
  Raster out(green.grid(), 1);
  for (std::size_t i = 0; i < out.data().size(); ++i) {
    const float g = green.data()[i], n = nir.data()[i];
    if (green.is_nodata(g) || nir.is_nodata(n) || g + n == 0.0f) {
      out.data()[i] = out.nodata();
    } else {
      out.data()[i] = std::clamp((g - n) / (g + n), -1.0f, 1.0f);
    }
  }
  return out;
}

Raster classify_ndwi(const Raster& index, double threshold) {
  Raster out(index.grid(), 1, index.nodata());
  for (std::size_t i = 0; i < index.band_size(); ++i) {
    const float v = index.data()[i];
    out.data()[i] = index.is_nodata(v) ? index.nodata() : (v > threshold ? 1.0f : 0.0f);
  }
  return out;
}

}  // namespace p2s
