#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "airglyph/errors.hpp"
#include "airglyph/preprocess.hpp"
#include "airglyph/rng.hpp"

namespace airglyph {

/// Row-major dense tensor of doubles. All arithmetic is 64-bit.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  static Tensor zeros(std::vector<std::size_t> s) {
    std::size_t n = 1;
    for (const auto d : s) n *= d;
    return Tensor{std::move(s), std::vector<double>(n, 0.0)};
  }

  std::size_t size() const { return values.size(); }
};

/// Converts a window into a (channels=3, length=T) tensor.
inline Tensor tensor_from_window(const Window& w) {
  const std::size_t t = w.length();
  Tensor x = Tensor::zeros({3, t});
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t a = 0; a < 3; ++a) x.values[a * t + i] = w.values[i][a];
  }
  return x;
}

struct Conv1d {
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
};
struct Relu {};
struct MaxPool {
  std::size_t width = 2;  // stride equals width (non-overlapping)
};
struct GlobalAvgPool {};
struct Dense {
  std::size_t out_dim = 0;
};

using LayerSpec = std::variant<Conv1d, Relu, MaxPool, GlobalAvgPool, Dense>;

inline std::string layer_name(const LayerSpec& l) {
  if (std::holds_alternative<Conv1d>(l)) return "conv1d";
  if (std::holds_alternative<Relu>(l)) return "relu";
  if (std::holds_alternative<MaxPool>(l)) return "maxpool";
  if (std::holds_alternative<GlobalAvgPool>(l)) return "global_avg_pool";
  return "dense";
}

struct NetSpec {
  std::size_t input_channels = 3;
  std::size_t input_len = kDefaultWindowLen;
  std::vector<LayerSpec> layers;

  // Shape of the activation entering layer i; index layers.size() = output.
  std::vector<std::vector<std::size_t>> shapes() const {
    std::vector<std::vector<std::size_t>> out;
    std::vector<std::size_t> cur = {input_channels, input_len};
    out.push_back(cur);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto fail = [&](const std::string& why) -> void {
        throw ValidationError("layer " + std::to_string(i) + " (" + layer_name(layers[i]) +
                              "): " + why);
      };
      if (const auto* c = std::get_if<Conv1d>(&layers[i])) {
        if (cur.size() != 2) fail("expects a (channels, length) input");
        if (c->kernel == 0 || c->out_channels == 0 || c->stride == 0) fail("bad conv parameters");
        const std::size_t padded = cur[1] + 2 * c->padding;
        if (padded < c->kernel) fail("kernel larger than padded input length");
        cur = {c->out_channels, (padded - c->kernel) / c->stride + 1};
      } else if (std::get_if<Relu>(&layers[i])) {
        // shape preserved
      } else if (const auto* m = std::get_if<MaxPool>(&layers[i])) {
        if (cur.size() != 2) fail("expects a (channels, length) input");
        if (m->width == 0 || cur[1] < m->width) fail("pool width exceeds input length");
        cur = {cur[0], cur[1] / m->width};
      } else if (std::get_if<GlobalAvgPool>(&layers[i])) {
        if (cur.size() != 2) fail("expects a (channels, length) input");
        cur = {cur[0]};
      } else if (const auto* d = std::get_if<Dense>(&layers[i])) {
        if (d->out_dim == 0) fail("dense out_dim must be > 0");
        std::size_t flat = 1;
        for (const auto v : cur) flat *= v;
        cur = {d->out_dim};
      }
      out.push_back(cur);
    }
    return out;
  }

  std::size_t output_dim() const {
    const auto s = shapes().back();
    std::size_t n = 1;
    for (const auto v : s) n *= v;
    return n;
  }
};

struct LayerParams {
  std::vector<double> w;
  std::vector<double> b;
};

struct Net {
  NetSpec spec;
  std::vector<LayerParams> params;
  std::uint64_t init_seed = 0;

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.w.size() + p.b.size();
    return n;
  }
};

/// Glorot-uniform initialization, deterministic given the seed.
inline Net net_init(NetSpec spec, std::uint64_t seed) {
  const auto shapes = spec.shapes();
  Net net{std::move(spec), {}, seed};
  Rng rng(seed);
  for (std::size_t i = 0; i < net.spec.layers.size(); ++i) {
    LayerParams p;
    if (const auto* c = std::get_if<Conv1d>(&net.spec.layers[i])) {
      const std::size_t in_c = shapes[i][0];
      const std::size_t fan_in = in_c * c->kernel;
      const std::size_t fan_out = c->out_channels * c->kernel;
      const double lim = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      p.w.resize(c->out_channels * in_c * c->kernel);
      for (auto& v : p.w) v = rng.uniform(-lim, lim);
      p.b.assign(c->out_channels, 0.0);
    } else if (const auto* d = std::get_if<Dense>(&net.spec.layers[i])) {
      std::size_t in_dim = 1;
      for (const auto v : shapes[i]) in_dim *= v;
      const double lim = std::sqrt(6.0 / static_cast<double>(in_dim + d->out_dim));
      p.w.resize(d->out_dim * in_dim);
      for (auto& v : p.w) v = rng.uniform(-lim, lim);
      p.b.assign(d->out_dim, 0.0);
    }
    net.params.push_back(std::move(p));
  }
  return net;
}

struct ForwardCache {
  std::vector<Tensor> activations;                 // input to each layer + final output
  std::vector<std::vector<std::size_t>> pool_idx;  // argmax per maxpool layer slot
};

inline Tensor forward(const Net& net, const Tensor& input, ForwardCache* cache = nullptr) {
  const auto shapes = net.spec.shapes();
  {
    std::size_t expect = 1;
    for (const auto v : shapes[0]) expect *= v;
    if (input.size() != expect) {
      throw ValidationError("input size " + std::to_string(input.size()) +
                            " does not match net input shape");
    }
  }
  Tensor cur = input;
  cur.shape = shapes[0];
  if (cache) {
    cache->activations.clear();
    cache->pool_idx.assign(net.spec.layers.size(), {});
  }
  for (std::size_t i = 0; i < net.spec.layers.size(); ++i) {
    if (cache) cache->activations.push_back(cur);
    Tensor next = Tensor::zeros(shapes[i + 1]);
    if (const auto* c = std::get_if<Conv1d>(&net.spec.layers[i])) {
      const std::size_t in_c = shapes[i][0];
      const std::size_t in_l = shapes[i][1];
      const std::size_t out_l = shapes[i + 1][1];
      const auto& p = net.params[i];
      for (std::size_t oc = 0; oc < c->out_channels; ++oc) {
        for (std::size_t ol = 0; ol < out_l; ++ol) {
          double acc = p.b[oc];
          for (std::size_t ic = 0; ic < in_c; ++ic) {
            for (std::size_t k = 0; k < c->kernel; ++k) {
              const std::ptrdiff_t il =
                  static_cast<std::ptrdiff_t>(ol * c->stride + k) -
                  static_cast<std::ptrdiff_t>(c->padding);
              if (il < 0 || il >= static_cast<std::ptrdiff_t>(in_l)) continue;
              acc += p.w[(oc * in_c + ic) * c->kernel + k] *
                     cur.values[ic * in_l + static_cast<std::size_t>(il)];
            }
          }
          next.values[oc * out_l + ol] = acc;
        }
      }
    } else if (std::get_if<Relu>(&net.spec.layers[i])) {
      for (std::size_t j = 0; j < cur.size(); ++j) {
        next.values[j] = cur.values[j] > 0.0 ? cur.values[j] : 0.0;
      }
    } else if (const auto* m = std::get_if<MaxPool>(&net.spec.layers[i])) {
      const std::size_t ch = shapes[i][0];
      const std::size_t in_l = shapes[i][1];
      const std::size_t out_l = shapes[i + 1][1];
      if (cache) cache->pool_idx[i].resize(ch * out_l);
      for (std::size_t c2 = 0; c2 < ch; ++c2) {
        for (std::size_t ol = 0; ol < out_l; ++ol) {
          std::size_t best = c2 * in_l + ol * m->width;
          for (std::size_t k = 1; k < m->width; ++k) {
            const std::size_t idx = c2 * in_l + ol * m->width + k;
            if (cur.values[idx] > cur.values[best]) best = idx;
          }
          next.values[c2 * out_l + ol] = cur.values[best];
          if (cache) cache->pool_idx[i][c2 * out_l + ol] = best;
        }
      }
    } else if (std::get_if<GlobalAvgPool>(&net.spec.layers[i])) {
      const std::size_t ch = shapes[i][0];
      const std::size_t in_l = shapes[i][1];
      for (std::size_t c2 = 0; c2 < ch; ++c2) {
        double acc = 0.0;
        for (std::size_t l = 0; l < in_l; ++l) acc += cur.values[c2 * in_l + l];
        next.values[c2] = acc / static_cast<double>(in_l);
      }
    } else if (const auto* d = std::get_if<Dense>(&net.spec.layers[i])) {
      const std::size_t in_dim = cur.size();
      const auto& p = net.params[i];
      for (std::size_t o = 0; o < d->out_dim; ++o) {
        double acc = p.b[o];
        for (std::size_t j = 0; j < in_dim; ++j) acc += p.w[o * in_dim + j] * cur.values[j];
        next.values[o] = acc;
      }
    }
    cur = std::move(next);
  }
  if (cache) cache->activations.push_back(cur);
  return cur;
}

struct Gradients {
  std::vector<LayerParams> param_grads;
  Tensor input_grad;
};

inline Gradients backward(const Net& net, const ForwardCache& cache, const Tensor& output_grad) {
  if (cache.activations.size() != net.spec.layers.size() + 1) {
    throw ValidationError("forward cache does not match this net");
  }
  if (output_grad.size() != cache.activations.back().size()) {
    throw ValidationError("output_grad size does not match net output");
  }
  Gradients g;
  g.param_grads.resize(net.spec.layers.size());
  Tensor grad = output_grad;
  for (std::size_t ri = net.spec.layers.size(); ri-- > 0;) {
    const Tensor& in = cache.activations[ri];
    Tensor in_grad = Tensor::zeros(in.shape);
    if (const auto* c = std::get_if<Conv1d>(&net.spec.layers[ri])) {
      const std::size_t in_c = in.shape[0];
      const std::size_t in_l = in.shape[1];
      const std::size_t out_l = cache.activations[ri + 1].shape[1];
      const auto& p = net.params[ri];
      auto& pg = g.param_grads[ri];
      pg.w.assign(p.w.size(), 0.0);
      pg.b.assign(p.b.size(), 0.0);
      for (std::size_t oc = 0; oc < c->out_channels; ++oc) {
        for (std::size_t ol = 0; ol < out_l; ++ol) {
          const double go = grad.values[oc * out_l + ol];
          pg.b[oc] += go;
          for (std::size_t ic = 0; ic < in_c; ++ic) {
            for (std::size_t k = 0; k < c->kernel; ++k) {
              const std::ptrdiff_t il =
                  static_cast<std::ptrdiff_t>(ol * c->stride + k) -
                  static_cast<std::ptrdiff_t>(c->padding);
              if (il < 0 || il >= static_cast<std::ptrdiff_t>(in_l)) continue;
              const std::size_t ii = ic * in_l + static_cast<std::size_t>(il);
              pg.w[(oc * in_c + ic) * c->kernel + k] += go * in.values[ii];
              in_grad.values[ii] += go * p.w[(oc * in_c + ic) * c->kernel + k];
            }
          }
        }
      }
    } else if (std::get_if<Relu>(&net.spec.layers[ri])) {
      for (std::size_t j = 0; j < in.size(); ++j) {
        in_grad.values[j] = in.values[j] > 0.0 ? grad.values[j] : 0.0;
      }
    } else if (std::get_if<MaxPool>(&net.spec.layers[ri])) {
      const auto& idx = cache.pool_idx[ri];
      for (std::size_t j = 0; j < grad.size(); ++j) in_grad.values[idx[j]] += grad.values[j];
    } else if (std::get_if<GlobalAvgPool>(&net.spec.layers[ri])) {
      const std::size_t ch = in.shape[0];
      const std::size_t in_l = in.shape[1];
      for (std::size_t c2 = 0; c2 < ch; ++c2) {
        const double v = grad.values[c2] / static_cast<double>(in_l);
        for (std::size_t l = 0; l < in_l; ++l) in_grad.values[c2 * in_l + l] = v;
      }
    } else if (const auto* d = std::get_if<Dense>(&net.spec.layers[ri])) {
      const std::size_t in_dim = in.size();
      const auto& p = net.params[ri];
      auto& pg = g.param_grads[ri];
      pg.w.assign(p.w.size(), 0.0);
      pg.b.assign(p.b.size(), 0.0);
      for (std::size_t o = 0; o < d->out_dim; ++o) {
        const double go = grad.values[o];
        pg.b[o] = go;
        for (std::size_t j = 0; j < in_dim; ++j) {
          pg.w[o * in_dim + j] = go * in.values[j];
          in_grad.values[j] += go * p.w[o * in_dim + j];
        }
      }
    }
    grad = std::move(in_grad);
  }
  g.input_grad = std::move(grad);
  return g;
}

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<LayerParams> m;
  std::vector<LayerParams> v;

  static AdamState create(const Net& net, double lr) {
    AdamState s;
    s.lr = lr;
    for (const auto& p : net.params) {
      s.m.push_back({std::vector<double>(p.w.size(), 0.0), std::vector<double>(p.b.size(), 0.0)});
      s.v.push_back({std::vector<double>(p.w.size(), 0.0), std::vector<double>(p.b.size(), 0.0)});
    }
    return s;
  }

  void validate() const {
    if (!(lr > 0.0) || !(eps > 0.0) || beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
      throw ConfigError("bad Adam hyper-parameters");
    }
  }
};

namespace nn_detail {

inline void adam_update(std::vector<double>& p, const std::vector<double>& g,
                        std::vector<double>& m, std::vector<double>& v, const AdamState& s,
                        double bc1, double bc2) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
    v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
    const double mh = m[i] / bc1;
    const double vh = v[i] / bc2;
    p[i] -= s.lr * mh / (std::sqrt(vh) + s.eps);
  }
}

}  // namespace nn_detail

/// One Adam step with bias correction. Empty gradient slots (non-parametric
/// layers) are skipped.
inline void adam_step(AdamState& state, Net& net, const std::vector<LayerParams>& grads) {
  state.validate();
  if (grads.size() != net.params.size()) throw ValidationError("gradient/parameter layer mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < net.params.size(); ++i) {
    if (net.params[i].w.empty() && net.params[i].b.empty()) continue;
    if (grads[i].w.size() != net.params[i].w.size() || grads[i].b.size() != net.params[i].b.size()) {
      throw ValidationError("gradient shape mismatch at layer " + std::to_string(i));
    }
    nn_detail::adam_update(net.params[i].w, grads[i].w, state.m[i].w, state.v[i].w, state, bc1, bc2);
    nn_detail::adam_update(net.params[i].b, grads[i].b, state.m[i].b, state.v[i].b, state, bc1, bc2);
  }
}

inline void accumulate(std::vector<LayerParams>& into, const std::vector<LayerParams>& g) {
  if (into.empty()) {
    into = g;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (into[i].w.size() < g[i].w.size()) into[i].w.resize(g[i].w.size(), 0.0);
    if (into[i].b.size() < g[i].b.size()) into[i].b.resize(g[i].b.size(), 0.0);
    for (std::size_t j = 0; j < g[i].w.size(); ++j) into[i].w[j] += g[i].w[j];
    for (std::size_t j = 0; j < g[i].b.size(); ++j) into[i].b[j] += g[i].b[j];
  }
}

inline void scale_grads(std::vector<LayerParams>& g, double f) {
  for (auto& l : g) {
    for (auto& v : l.w) v *= f;
    for (auto& v : l.b) v *= f;
  }
}

/// Max relative error of analytic gradients against central finite
/// differences of the scalar loss dot(output, c) for a fixed random c.
inline double grad_check(const Net& net, const Tensor& input, double h = 1e-4,
                         std::uint64_t seed = 7) {
  if (net.param_count() > 10000) throw ValidationError("grad_check net too large to brute-force");
  const std::size_t out_dim = net.spec.output_dim();
  Tensor proj = Tensor::zeros({out_dim});
  Rng rng(seed);
  for (auto& v : proj.values) v = rng.uniform(-1.0, 1.0);

  ForwardCache cache;
  forward(net, input, &cache);
  const Gradients analytic = backward(net, cache, proj);

  Net probe = net;
  const auto loss = [&]() {
    const Tensor out = forward(probe, input);
    double acc = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) acc += out.values[i] * proj.values[i];
    return acc;
  };

  double max_rel = 0.0;
  const auto check_array = [&](std::vector<double>& p, const std::vector<double>& a) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + h;
      const double lp = loss();
      p[i] = orig - h;
      const double lm = loss();
      p[i] = orig;
      const double numeric = (lp - lm) / (2.0 * h);
      const double denom = std::max({std::abs(a[i]), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::abs(a[i] - numeric) / denom);
    }
  };
  for (std::size_t li = 0; li < probe.params.size(); ++li) {
    if (probe.params[li].w.empty() && probe.params[li].b.empty()) continue;
    check_array(probe.params[li].w, analytic.param_grads[li].w);
    check_array(probe.params[li].b, analytic.param_grads[li].b);
  }
  return max_rel;
}

inline std::vector<double> softmax(const std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

// --- checkpoint serialization -----------------------------------------------

inline nlohmann::ordered_json layer_to_json(const LayerSpec& l) {
  nlohmann::ordered_json j;
  j["type"] = layer_name(l);
  if (const auto* c = std::get_if<Conv1d>(&l)) {
    j["out_channels"] = c->out_channels;
    j["kernel"] = c->kernel;
    j["stride"] = c->stride;
    j["padding"] = c->padding;
  } else if (const auto* m = std::get_if<MaxPool>(&l)) {
    j["width"] = m->width;
  } else if (const auto* d = std::get_if<Dense>(&l)) {
    j["out_dim"] = d->out_dim;
  }
  return j;
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "conv1d") {
    return Conv1d{j.at("out_channels").get<std::size_t>(), j.at("kernel").get<std::size_t>(),
                  j.at("stride").get<std::size_t>(), j.at("padding").get<std::size_t>()};
  }
  if (type == "relu") return Relu{};
  if (type == "maxpool") return MaxPool{j.at("width").get<std::size_t>()};
  if (type == "global_avg_pool") return GlobalAvgPool{};
  if (type == "dense") return Dense{j.at("out_dim").get<std::size_t>()};
  throw ValidationError("unknown layer type in checkpoint: '" + type + "'");
}

inline nlohmann::ordered_json net_to_json(const Net& net) {
  nlohmann::ordered_json j;
  j["input_channels"] = net.spec.input_channels;
  j["input_len"] = net.spec.input_len;
  j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : net.spec.layers) j["layers"].push_back(layer_to_json(l));
  j["seed"] = net.init_seed;
  j["params"] = nlohmann::ordered_json::array();
  for (const auto& p : net.params) {
    nlohmann::ordered_json lp;
    lp["w"] = p.w;
    lp["b"] = p.b;
    j["params"].push_back(std::move(lp));
  }
  return j;
}

inline Net net_from_json(const nlohmann::json& j) {
  Net net;
  net.spec.input_channels = j.at("input_channels").get<std::size_t>();
  net.spec.input_len = j.at("input_len").get<std::size_t>();
  for (const auto& l : j.at("layers")) net.spec.layers.push_back(layer_from_json(l));
  net.init_seed = j.at("seed").get<std::uint64_t>();
  for (const auto& p : j.at("params")) {
    net.params.push_back({p.at("w").get<std::vector<double>>(), p.at("b").get<std::vector<double>>()});
  }
  const auto shapes = net.spec.shapes();  // validates composition
  if (net.params.size() != net.spec.layers.size()) {
    throw ValidationError("checkpoint params do not match layer count");
  }
  (void)shapes;
  return net;
}

inline void save_checkpoint(const Net& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path.string());
  out << net_to_json(net).dump(2) << '\n';
}

inline Net load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  nlohmann::json j;
  in >> j;
  return net_from_json(j);
}

/// Default encoder topology used by the mapper and the letter classifier.
inline NetSpec default_encoder_spec(std::size_t input_len = kDefaultWindowLen,
                                    std::size_t embedding_dim = 32) {
  NetSpec spec;
  spec.input_channels = 3;
  spec.input_len = input_len;
  spec.layers = {Conv1d{16, 7, 2, 3}, Relu{}, Conv1d{32, 5, 2, 2}, Relu{}, MaxPool{2},
                 Dense{embedding_dim}};
  return spec;
}

}  // namespace airglyph
