#include "spool/network.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "spool/common.hpp"

namespace spool {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Tensor4 gaussian_tensor(const Shape4& s, RngStream stream, double std_dev) {
  Tensor4 t(s);
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = stream.next_gaussian() * std_dev;
  return t;
}

const SwitchMap* find_frozen(const ForwardOptions& opts, std::size_t layer) {
  if (!opts.frozen_switches) return nullptr;
  for (const auto& [idx, sw] : *opts.frozen_switches)
    if (idx == layer) return sw;
  return nullptr;
}

PoolingMode resolve_pool_mode(const LayerSpec& l, Phase phase,
                              const ForwardOptions& opts) {
  PoolingMode m = opts.mode_override
                      ? *opts.mode_override
                      : (phase == Phase::Train ? l.pool_train : l.pool_test);
  // Inside a single forward pass a Stochastic-N request is one stochastic
  // draw; the N-sample average lives in predict_stochastic_n.
  if (m.kind == PoolingModeKind::StochasticN) m = PoolingMode::stochastic();
  return m;
}

// Shared forward walk; fills `trace` when given, otherwise keeps only the
// running activation.
Tensor4 walk_forward(const NetworkSpec& spec, const NetworkParams& params,
                     const Tensor4& batch, Phase phase, RngStream& rng,
                     const ForwardOptions& opts, ForwardTrace* trace) {
  const Shape4& bs = batch.shape();
  if (bs.n == 0 || bs.c != spec.input_c || bs.h != spec.input_h ||
      bs.w != spec.input_w)
    throw std::invalid_argument(
        "network_forward: batch " + bs.str() + " does not match input " +
        std::to_string(spec.input_c) + "x" + std::to_string(spec.input_h) +
        "x" + std::to_string(spec.input_w));
  if (params.layer.size() != spec.layers.size())
    throw std::invalid_argument("network_forward: params/spec layer count");

  if (trace) {
    trace->phase = phase;
    trace->inputs.clear();
    trace->pool_geom.assign(spec.layers.size(), PoolingGeometry{});
    trace->pool_mode_used.assign(spec.layers.size(), PoolingMode::average());
    trace->switches.assign(spec.layers.size(), std::nullopt);
    trace->rng_calls.clear();
  }

  Tensor4 cur = batch;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (trace) trace->inputs.push_back(cur);
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::Softmax:
        cur = conv2d_forward(cur, params.layer[i]);
        break;
      case LayerKind::Relu:
        cur = relu_forward(cur);
        break;
      case LayerKind::ResponseNorm:
        cur = lrn_forward(cur, l.lrn);
        break;
      case LayerKind::Pool: {
        const PoolingGeometry g = make_pooling_geometry(
            l.pool_window, l.pool_stride, cur.shape().h, cur.shape().w);
        if (trace) trace->pool_geom[i] = g;
        if (const SwitchMap* frozen = find_frozen(opts, i)) {
          if (trace) {
            trace->pool_mode_used[i] = PoolingMode::stochastic();
            trace->switches[i] = *frozen;
          }
          cur = gather_switches(cur, *frozen, g);
          break;
        }
        const PoolingMode mode = resolve_pool_mode(l, phase, opts);
        if (trace) trace->pool_mode_used[i] = mode;
        switch (mode.kind) {
          case PoolingModeKind::Average:
            cur = avg_pool_forward(cur, g);
            break;
          case PoolingModeKind::ProbWeight:
            cur = prob_weight_forward(cur, g);
            break;
          case PoolingModeKind::Max: {
            auto [out, sw] = max_pool_forward(cur, g);
            if (trace) trace->switches[i] = std::move(sw);
            cur = std::move(out);
            break;
          }
          case PoolingModeKind::Stochastic:
          case PoolingModeKind::StochasticN: {
            if (trace) trace->rng_calls.push_back(rng.u64_at(rng.position()));
            auto [out, sw] = stochastic_pool_forward(cur, g, rng);
            if (trace) trace->switches[i] = std::move(sw);
            cur = std::move(out);
            break;
          }
        }
        break;
      }
    }
  }
  return cur;
}

void put_kv(std::ostream& out, const std::string& k, const std::string& v) {
  out << k << "=" << v << "\n";
}

std::map<std::string, std::string> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("checkpoint: cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError("checkpoint: malformed manifest line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

std::string layer_file(std::size_t i, const char* what) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "layer%03zu_%s.sp4t", i, what);
  return buf;
}

Tensor4 bias_tensor(const std::vector<double>& bias) {
  Tensor4 t(1, 1, 1, bias.size());
  std::copy(bias.begin(), bias.end(), t.data());
  return t;
}

std::vector<double> bias_vector(const Tensor4& t, std::size_t expect) {
  if (t.size() != expect)
    throw DataError("checkpoint: bias tensor of " + std::to_string(t.size()) +
                    " values, expected " + std::to_string(expect));
  return {t.data(), t.data() + t.size()};
}

std::string mode_json(const PoolingMode& m) { return pooling_mode_name(m); }

json layer_json(const LayerSpec& l) {
  json j;
  switch (l.kind) {
    case LayerKind::Conv:
      j["kind"] = "conv";
      j["maps"] = l.conv_maps;
      j["kernel"] = l.conv_kernel;
      j["stride"] = l.conv_stride;
      break;
    case LayerKind::Relu:
      j["kind"] = "relu";
      break;
    case LayerKind::Pool:
      j["kind"] = "pool";
      j["window"] = l.pool_window;
      j["stride"] = l.pool_stride;
      j["train"] = mode_json(l.pool_train);
      j["test"] = mode_json(l.pool_test);
      break;
    case LayerKind::ResponseNorm:
      j["kind"] = "response-norm";
      j["size"] = l.lrn.size;
      j["alpha"] = l.lrn.alpha;
      j["beta"] = l.lrn.beta;
      j["k"] = l.lrn.k;
      break;
    case LayerKind::Softmax:
      j["kind"] = "softmax";
      j["classes"] = l.classes;
      break;
  }
  return j;
}

LayerSpec layer_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "conv")
    return LayerSpec::conv(j.at("maps").get<std::size_t>(),
                           j.at("kernel").get<std::size_t>(),
                           j.value("stride", std::size_t{1}));
  if (kind == "relu") return LayerSpec::relu();
  if (kind == "pool")
    return LayerSpec::pool(j.at("window").get<std::size_t>(),
                           j.at("stride").get<std::size_t>(),
                           parse_pooling_mode(j.value("train", "stochastic")),
                           parse_pooling_mode(j.value("test", "prob-weight")));
  if (kind == "response-norm") {
    LrnParams p;
    p.size = j.value("size", p.size);
    p.alpha = j.value("alpha", p.alpha);
    p.beta = j.value("beta", p.beta);
    p.k = j.value("k", p.k);
    return LayerSpec::response_norm(p);
  }
  if (kind == "softmax")
    return LayerSpec::softmax(j.at("classes").get<std::size_t>());
  throw ConfigError("network spec: unknown layer kind \"" + kind + "\"");
}

}  // namespace

NetworkParams init_params(const NetworkSpec& spec, RngStream rng,
                          double init_std) {
  spec.validate();
  if (init_std < 0.0)
    throw std::invalid_argument("init_params: negative std");
  const auto shapes = spec.shape_walk(1);
  NetworkParams p;
  p.layer.resize(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const Shape4& in = shapes[i];
    if (l.kind == LayerKind::Conv) {
      p.layer[i].filters =
          gaussian_tensor({l.conv_maps, in.c, l.conv_kernel, l.conv_kernel},
                          rng.substream(i), init_std);
      p.layer[i].bias.assign(l.conv_maps, 0.0);
      p.layer[i].stride = l.conv_stride;
    } else if (l.kind == LayerKind::Softmax) {
      p.layer[i].filters = gaussian_tensor({l.classes, in.c, in.h, in.w},
                                           rng.substream(i), init_std);
      p.layer[i].bias.assign(l.classes, 0.0);
      p.layer[i].stride = 1;
    }
  }
  return p;
}

ForwardTrace network_forward(const NetworkSpec& spec,
                             const NetworkParams& params, const Tensor4& batch,
                             Phase phase, RngStream& rng,
                             const ForwardOptions& opts) {
  ForwardTrace trace;
  trace.logits = walk_forward(spec, params, batch, phase, rng, opts, &trace);
  return trace;
}

Tensor4 network_predict(const NetworkSpec& spec, const NetworkParams& params,
                        const Tensor4& batch, Phase phase, RngStream& rng,
                        const ForwardOptions& opts) {
  return softmax_probs(
      walk_forward(spec, params, batch, phase, rng, opts, nullptr));
}

BackwardResult network_backward(const NetworkSpec& spec,
                                const NetworkParams& params,
                                const ForwardTrace& trace,
                                const std::vector<int>& labels,
                                std::size_t divisor) {
  if (trace.inputs.size() != spec.layers.size())
    throw std::invalid_argument(
        "network_backward: trace does not cover this network");
  BackwardResult r;
  r.layer.resize(spec.layers.size());

  SoftmaxXent xent = softmax_xent(trace.logits, labels, divisor);
  r.loss = xent.loss;
  Tensor4 grad = std::move(xent.grad);

  for (std::size_t ri = spec.layers.size(); ri-- > 0;) {
    const LayerSpec& l = spec.layers[ri];
    const Tensor4& in = trace.inputs[ri];
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::Softmax: {
        ConvGrads g = conv2d_backward(in, params.layer[ri], grad);
        r.layer[ri].filters = std::move(g.filters);
        r.layer[ri].bias = std::move(g.bias);
        grad = std::move(g.input);
        break;
      }
      case LayerKind::Relu:
        grad = relu_backward(in, grad);
        break;
      case LayerKind::ResponseNorm:
        grad = lrn_backward(in, grad, l.lrn);
        break;
      case LayerKind::Pool: {
        const PoolingGeometry& g = trace.pool_geom[ri];
        const PoolingMode mode = trace.pool_mode_used[ri];
        switch (mode.kind) {
          case PoolingModeKind::Average:
            grad = avg_pool_backward(grad, g);
            break;
          case PoolingModeKind::ProbWeight:
            grad = prob_weight_backward(in, g, grad);
            break;
          default:
            if (!trace.switches[ri])
              throw std::invalid_argument(
                  "network_backward: trace is missing switches for pool layer " +
                  std::to_string(ri));
            grad = switch_pool_backward(grad, *trace.switches[ri], g);
            break;
        }
        break;
      }
    }
  }
  r.grad_input = std::move(grad);
  return r;
}

Tensor4 predict_stochastic_n(const NetworkSpec& spec,
                             const NetworkParams& params, const Tensor4& batch,
                             int n, RngStream& rng) {
  if (n < 1)
    throw std::invalid_argument("predict_stochastic_n: n must be >= 1");
  const RngStream call = rng.substream(rng.next_u64());
  ForwardOptions opts;
  opts.mode_override = PoolingMode::stochastic();
  Tensor4 acc;
  for (int pass = 0; pass < n; ++pass) {
    RngStream ps = call.substream(static_cast<std::uint64_t>(pass));
    Tensor4 probs = network_predict(spec, params, batch, Phase::Test, ps, opts);
    if (pass == 0) {
      acc = std::move(probs);
    } else {
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += probs[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] *= inv;
  return acc;
}

std::vector<LayerGrads> zero_grads_like(const NetworkParams& params) {
  std::vector<LayerGrads> g(params.layer.size());
  for (std::size_t i = 0; i < params.layer.size(); ++i) {
    if (params.layer[i].filters.size() == 0) continue;
    g[i].filters = Tensor4(params.layer[i].filters.shape());
    g[i].bias.assign(params.layer[i].bias.size(), 0.0);
  }
  return g;
}

void accumulate_grads(std::vector<LayerGrads>& into,
                      const std::vector<LayerGrads>& from) {
  if (into.size() != from.size())
    throw std::invalid_argument("accumulate_grads: layer count mismatch");
  for (std::size_t i = 0; i < into.size(); ++i) {
    if (from[i].filters.size() == 0) continue;
    require_same_shape(into[i].filters, from[i].filters, "accumulate_grads");
    for (std::size_t k = 0; k < into[i].filters.size(); ++k)
      into[i].filters[k] += from[i].filters[k];
    for (std::size_t k = 0; k < into[i].bias.size(); ++k)
      into[i].bias[k] += from[i].bias[k];
  }
}

std::string network_spec_to_json(const NetworkSpec& spec) {
  json j;
  j["input"] = {{"c", spec.input_c}, {"h", spec.input_h}, {"w", spec.input_w}};
  j["layers"] = json::array();
  for (const LayerSpec& l : spec.layers) j["layers"].push_back(layer_json(l));
  return j.dump(2);
}

NetworkSpec network_spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("network spec: invalid JSON: ") + e.what());
  }
  try {
    NetworkSpec spec;
    spec.input_c = j.at("input").at("c").get<std::size_t>();
    spec.input_h = j.at("input").at("h").get<std::size_t>();
    spec.input_w = j.at("input").at("w").get<std::size_t>();
    for (const json& lj : j.at("layers")) spec.layers.push_back(layer_from_json(lj));
    spec.validate();
    return spec;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("network spec: ") + e.what());
  }
}

std::uint64_t network_spec_hash(const NetworkSpec& spec) {
  const std::string s = network_spec_to_json(spec);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

void save_checkpoint(const Checkpoint& cp, const std::string& dir) {
  fs::create_directories(dir);
  {
    std::ofstream spec_out(fs::path(dir) / "spec.json");
    if (!spec_out) throw DataError("checkpoint: cannot write spec.json in " + dir);
    spec_out << network_spec_to_json(cp.spec) << "\n";
  }
  if (cp.params.layer.size() != cp.spec.layers.size() ||
      cp.velocity.size() != cp.spec.layers.size())
    throw std::invalid_argument("save_checkpoint: params/velocity misaligned");
  for (std::size_t i = 0; i < cp.params.layer.size(); ++i) {
    const ConvParams& p = cp.params.layer[i];
    if (p.filters.size() == 0) continue;
    p.filters.save_file((fs::path(dir) / layer_file(i, "filters")).string());
    bias_tensor(p.bias).save_file((fs::path(dir) / layer_file(i, "bias")).string());
    cp.velocity[i].filters.save_file(
        (fs::path(dir) / layer_file(i, "vfilters")).string());
    bias_tensor(cp.velocity[i].bias)
        .save_file((fs::path(dir) / layer_file(i, "vbias")).string());
  }
  std::ostringstream hash;
  hash << std::hex << network_spec_hash(cp.spec);
  std::ofstream man(fs::path(dir) / "manifest.txt");
  if (!man) throw DataError("checkpoint: cannot write manifest in " + dir);
  put_kv(man, "format", "spool-checkpoint-1");
  put_kv(man, "epoch", std::to_string(cp.epoch));
  put_kv(man, "master_seed", std::to_string(cp.master_seed));
  put_kv(man, "spec_hash", hash.str());
  put_kv(man, "layers", std::to_string(cp.spec.layers.size()));
  if (!man) throw DataError("checkpoint: manifest write failed");
}

Checkpoint load_checkpoint(const std::string& dir) {
  const auto kv = read_manifest((fs::path(dir) / "manifest.txt").string());
  const auto need = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end())
      throw DataError(std::string("checkpoint: manifest missing ") + key);
    return it->second;
  };
  if (need("format") != "spool-checkpoint-1")
    throw DataError("checkpoint: unsupported format " + need("format"));

  Checkpoint cp;
  cp.epoch = std::stoull(need("epoch"));
  cp.master_seed = std::stoull(need("master_seed"));

  std::ifstream spec_in(fs::path(dir) / "spec.json");
  if (!spec_in) throw DataError("checkpoint: missing spec.json in " + dir);
  std::ostringstream spec_text;
  spec_text << spec_in.rdbuf();
  cp.spec = network_spec_from_json(spec_text.str());

  std::ostringstream hash;
  hash << std::hex << network_spec_hash(cp.spec);
  if (hash.str() != need("spec_hash"))
    throw DataError("checkpoint: spec_hash mismatch (corrupt or edited spec)");

  const auto shapes = cp.spec.shape_walk(1);
  cp.params.layer.resize(cp.spec.layers.size());
  cp.velocity.resize(cp.spec.layers.size());
  for (std::size_t i = 0; i < cp.spec.layers.size(); ++i) {
    const LayerSpec& l = cp.spec.layers[i];
    if (l.kind != LayerKind::Conv && l.kind != LayerKind::Softmax) continue;
    const std::size_t maps = l.kind == LayerKind::Conv ? l.conv_maps : l.classes;
    ConvParams& p = cp.params.layer[i];
    p.filters = Tensor4::load_file((fs::path(dir) / layer_file(i, "filters")).string());
    p.bias = bias_vector(
        Tensor4::load_file((fs::path(dir) / layer_file(i, "bias")).string()), maps);
    p.stride = l.kind == LayerKind::Conv ? l.conv_stride : 1;
    const Shape4 expect =
        l.kind == LayerKind::Conv
            ? Shape4{l.conv_maps, shapes[i].c, l.conv_kernel, l.conv_kernel}
            : Shape4{l.classes, shapes[i].c, shapes[i].h, shapes[i].w};
    if (!(p.filters.shape() == expect))
      throw DataError("checkpoint: layer " + std::to_string(i) + " filters " +
                      p.filters.shape().str() + ", expected " + expect.str());
    cp.velocity[i].filters =
        Tensor4::load_file((fs::path(dir) / layer_file(i, "vfilters")).string());
    cp.velocity[i].bias = bias_vector(
        Tensor4::load_file((fs::path(dir) / layer_file(i, "vbias")).string()), maps);
    if (!(cp.velocity[i].filters.shape() == expect))
      throw DataError("checkpoint: layer " + std::to_string(i) + " velocity shape");
  }
  return cp;
}

}  // namespace spool
