#include "affectlab/model.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "affectlab/error.hpp"
#include "text_util.hpp"

namespace affectlab::nn {

namespace {

void accumulate(Parameter& p, const Tensor& g) {
  if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
  for (std::size_t i = 0; i < g.size(); ++i) p.grad[i] += g[i];
}

Parameter make_param(std::string name, Shape shape) { return Parameter{std::move(name), Tensor(std::move(shape)), {}, true}; }

void uniform_fill(Tensor& t, double limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : t.storage()) v = dist(rng);
}

void he_uniform(Tensor& t, std::size_t fan_in, std::mt19937_64& rng) {
  uniform_fill(t, std::sqrt(6.0 / static_cast<double>(fan_in)), rng);
}

// Reads time step t of x[n,l,f] into [n,f].
Tensor time_slice(const Tensor& x, std::size_t t) {
  const std::size_t n = x.dim(0), l = x.dim(1), f = x.dim(2);
  Tensor out({n, f});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t j = 0; j < f; ++j) out[b * f + j] = x[(b * l + t) * f + j];
  return out;
}

void write_time_slice(Tensor& x, std::size_t t, const Tensor& v) {
  const std::size_t n = x.dim(0), l = x.dim(1), f = x.dim(2);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t j = 0; j < f; ++j) x[(b * l + t) * f + j] = v[b * f + j];
}

std::string join_kv(const LayerSpec& l) {
  std::ostringstream s;
  s << to_string(l.kind);
  switch (l.kind) {
    case LayerKind::conv2d:
      s << " kernel_h=" << l.kernel_h << " kernel_w=" << l.kernel_w << " in=" << l.in_channels
        << " out=" << l.out_channels << " stride=" << l.stride << " padding=" << l.padding;
      break;
    case LayerKind::residual_block:
      s << " kernel_h=" << l.kernel_h << " kernel_w=" << l.kernel_w << " in=" << l.in_channels
        << " out=" << l.out_channels;
      break;
    case LayerKind::maxpool:
      s << " window=" << l.window << " stride=" << l.stride;
      break;
    case LayerKind::fc:
    case LayerKind::output_head:
      s << " units=" << l.units;
      break;
    case LayerKind::gru:
      s << " hidden_size=" << l.hidden_size << " num_layers=" << l.num_layers;
      break;
    case LayerKind::relu:
    case LayerKind::flatten:
      break;
  }
  return s.str();
}

LayerSpec parse_layer(const std::string& text) {
  std::istringstream in(text);
  std::string kind;
  in >> kind;
  LayerSpec l;
  l.kind = parse_layer_kind(kind);
  std::string tok;
  while (in >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw ParseError("layer attribute without '=': " + tok);
    const std::string key = tok.substr(0, eq);
    const auto v = detail::parse_int(tok.substr(eq + 1));
    if (!v || *v < 0) throw ParseError("layer attribute " + key + " must be a non-negative integer");
    const auto u = static_cast<std::size_t>(*v);
    if (key == "kernel_h") l.kernel_h = u;
    else if (key == "kernel_w") l.kernel_w = u;
    else if (key == "in") l.in_channels = u;
    else if (key == "out") l.out_channels = u;
    else if (key == "stride") l.stride = u;
    else if (key == "padding") l.padding = u;
    else if (key == "window") l.window = u;
    else if (key == "units") l.units = u;
    else if (key == "hidden_size") l.hidden_size = u;
    else if (key == "num_layers") l.num_layers = u;
    else throw ParseError("unknown layer attribute: " + key);
  }
  return l;
}

// ---- preset builders ----

struct SpecBuilder {
  ModelSpec spec;
  std::size_t channels = 3;

  void conv(std::size_t out, std::size_t k, std::size_t stride, std::size_t pad, bool relu = true) {
    LayerSpec l;
    l.kind = LayerKind::conv2d;
    l.kernel_h = l.kernel_w = k;
    l.in_channels = channels;
    l.out_channels = out;
    l.stride = stride;
    l.padding = pad;
    spec.layers.push_back(l);
    channels = out;
    if (relu) this->relu();
  }
  void pool(std::size_t window, std::size_t stride) {
    LayerSpec l;
    l.kind = LayerKind::maxpool;
    l.window = window;
    l.stride = stride;
    spec.layers.push_back(l);
  }
  void relu() { spec.layers.push_back(LayerSpec{LayerKind::relu}); }
  void residual(std::size_t out) {
    LayerSpec l;
    l.kind = LayerKind::residual_block;
    l.kernel_h = l.kernel_w = 3;
    l.in_channels = channels;
    l.out_channels = out;
    spec.layers.push_back(l);
    channels = out;
    relu();
  }
  void flatten() { spec.layers.push_back(LayerSpec{LayerKind::flatten}); }
  void fc(std::size_t units) {
    LayerSpec l;
    l.kind = LayerKind::fc;
    l.units = units;
    spec.layers.push_back(l);
    relu();
  }
  void gru(std::size_t hidden, std::size_t layers) {
    LayerSpec l;
    l.kind = LayerKind::gru;
    l.hidden_size = hidden;
    l.num_layers = layers;
    spec.layers.push_back(l);
  }
  void head() {
    LayerSpec l;
    l.kind = LayerKind::output_head;
    l.units = 2;
    spec.layers.push_back(l);
  }
};

void vgg16_body(SpecBuilder& b) {
  const std::size_t blocks[5][2] = {{64, 2}, {128, 2}, {256, 3}, {512, 3}, {512, 3}};
  for (int i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < blocks[i][1]; ++j) b.conv(blocks[i][0], 3, 1, 1);
    // The last pool is 3x3 stride 1 so a 96-pixel input ends at 4x4.
    if (i < 4) b.pool(2, 2);
    else b.pool(3, 1);
  }
}

void alexnet_body(SpecBuilder& b, std::size_t input) {
  // 11x11 stride 3; padding chosen so the output extent is integral.
  std::size_t pad = 0;
  while ((input + 2 * pad - 11) % 3 != 0) ++pad;
  b.conv(96, 11, 3, pad);
  b.pool(3, 2);
  b.conv(256, 5, 1, 2);
  b.pool(3, 2);
  b.conv(384, 3, 1, 1);
  b.conv(384, 3, 1, 1);
  b.conv(256, 3, 1, 1);
  b.pool(3, 1);
}

void resnet_body(SpecBuilder& b) {
  b.conv(64, 7, 1, 3);
  b.pool(4, 4);
  const std::size_t stages[4] = {64, 128, 256, 512};
  for (int i = 0; i < 4; ++i) {
    b.residual(stages[i]);
    b.residual(stages[i]);
    if (i < 3) b.pool(2, 2);
  }
}

}  // namespace

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::relu: return "relu";
    case LayerKind::fc: return "fc";
    case LayerKind::flatten: return "flatten";
    case LayerKind::gru: return "gru";
    case LayerKind::residual_block: return "residual_block";
    case LayerKind::output_head: return "output_head";
  }
  return "?";
}

LayerKind parse_layer_kind(const std::string& s) {
  for (auto k : {LayerKind::conv2d, LayerKind::maxpool, LayerKind::relu, LayerKind::fc, LayerKind::flatten,
                 LayerKind::gru, LayerKind::residual_block, LayerKind::output_head})
    if (to_string(k) == s) return k;
  throw ParseError("unknown layer kind: " + s);
}

bool ModelSpec::sequence_head() const {
  for (const auto& l : layers)
    if (l.kind == LayerKind::gru) return true;
  return false;
}

std::string serialize_spec(const ModelSpec& spec) {
  std::ostringstream s;
  s << "name = " << spec.name << "\n";
  s << "input_size = " << spec.input_size << "\n";
  s << "layers = " << spec.layers.size() << "\n";
  for (std::size_t i = 0; i < spec.layers.size(); ++i) s << "layer." << i << " = " << join_kv(spec.layers[i]) << "\n";
  return s.str();
}

ModelSpec parse_spec(const std::map<std::string, std::string>& kv) {
  auto get = [&](const std::string& key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw ParseError("model spec missing key: " + key);
    return it->second;
  };
  ModelSpec spec;
  spec.name = get("name");
  const auto size = detail::parse_int(get("input_size"));
  const auto count = detail::parse_int(get("layers"));
  if (!size || *size <= 0 || !count || *count < 0) throw ParseError("model spec: bad input_size or layers");
  spec.input_size = static_cast<std::size_t>(*size);
  for (long long i = 0; i < *count; ++i) spec.layers.push_back(parse_layer(get("layer." + std::to_string(i))));
  return spec;
}

std::vector<ShapeLedgerEntry> infer_shapes(const ModelSpec& spec) {
  if (spec.input_size == 0) throw ShapeError("model spec: input_size must be positive");
  std::vector<ShapeLedgerEntry> ledger;
  Shape cur{spec.input_size, spec.input_size, 3};
  bool seen_head = false;
  auto fail = [&](std::size_t i, const std::string& msg) {
    throw ShapeError("layer " + std::to_string(i) + " (" + to_string(spec.layers[i].kind) + "): " + msg);
  };
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (seen_head) fail(i, "layers after output_head");
    const bool spatial = cur.size() == 3;
    try {
      switch (l.kind) {
        case LayerKind::conv2d: {
          if (!spatial) fail(i, "conv2d after flatten");
          if (l.kernel_h == 0 || l.kernel_w == 0 || l.out_channels == 0 || l.stride == 0)
            fail(i, "sizes must be positive");
          if (l.in_channels != cur[2])
            fail(i, "expects " + std::to_string(l.in_channels) + " channels, input has " + std::to_string(cur[2]));
          const ops::ConvGeometry g{l.stride, l.padding};
          cur = {ops::conv_output_extent(cur[0], l.kernel_h, g), ops::conv_output_extent(cur[1], l.kernel_w, g),
                 l.out_channels};
          break;
        }
        case LayerKind::residual_block:
          if (!spatial) fail(i, "residual_block after flatten");
          if (l.in_channels != cur[2] || l.out_channels == 0) fail(i, "channel mismatch");
          cur[2] = l.out_channels;
          break;
        case LayerKind::maxpool:
          if (!spatial) fail(i, "maxpool after flatten");
          cur = {ops::pool_output_extent(cur[0], l.window, l.stride), ops::pool_output_extent(cur[1], l.window, l.stride),
                 cur[2]};
          break;
        case LayerKind::relu:
          break;
        case LayerKind::flatten:
          cur = {shape_size(cur)};
          break;
        case LayerKind::fc:
        case LayerKind::output_head:
          if (spatial) fail(i, "fully connected layer needs a flatten first");
          if (l.units == 0) fail(i, "units must be positive");
          cur = {l.units};
          seen_head = l.kind == LayerKind::output_head;
          break;
        case LayerKind::gru:
          if (spatial) fail(i, "gru needs a flatten first");
          if (l.hidden_size == 0 || l.num_layers == 0) fail(i, "hidden_size and num_layers must be positive");
          cur = {l.hidden_size};
          break;
      }
    } catch (const ShapeError& e) {
      if (std::string(e.what()).rfind("layer ", 0) == 0) throw;
      fail(i, e.what());
    }
    ledger.push_back({l, cur});
  }
  if (!seen_head) throw ShapeError("model spec has no output_head");
  if (cur != Shape{2}) throw ShapeError("final output dimension must be 2, got " + shape_string(cur));
  std::size_t grus = 0;
  for (const auto& l : spec.layers) grus += l.kind == LayerKind::gru;
  if (grus > 1) throw ShapeError("at most one gru layer entry (use num_layers to stack)");
  return ledger;
}

Shape conv_output_shape(const ModelSpec& spec) {
  Shape last{spec.input_size, spec.input_size, 3};
  for (const auto& e : infer_shapes(spec)) {
    if (e.layer.kind == LayerKind::flatten) break;
    last = e.output;
  }
  return last;
}

std::size_t parameter_count(const ModelSpec& spec) {
  std::size_t total = 0;
  Shape cur{spec.input_size, spec.input_size, 3};
  for (const auto& e : infer_shapes(spec)) {
    const LayerSpec& l = e.layer;
    switch (l.kind) {
      case LayerKind::conv2d:
        total += l.kernel_h * l.kernel_w * l.in_channels * l.out_channels + l.out_channels;
        break;
      case LayerKind::residual_block:
        total += 9 * l.in_channels * l.out_channels + 9 * l.out_channels * l.out_channels + 2 * l.out_channels;
        if (l.in_channels != l.out_channels) total += l.in_channels * l.out_channels + l.out_channels;
        break;
      case LayerKind::fc:
      case LayerKind::output_head:
        total += cur[0] * l.units + l.units;
        break;
      case LayerKind::gru: {
        std::size_t in = cur[0];
        for (std::size_t k = 0; k < l.num_layers; ++k) {
          total += 3 * (in * l.hidden_size + l.hidden_size * l.hidden_size + l.hidden_size);
          in = l.hidden_size;
        }
        break;
      }
      default:
        break;
    }
    cur = e.output;
  }
  return total;
}

std::vector<std::string> preset_names() {
  return {"vgg16-gru",    "alexnet-gru",      "resnet-gru",      "vgg16",       "alexnet",         "resnet",
          "vgg-mini-gru", "alexnet-mini-gru", "resnet-mini-gru", "vgg-mini",    "alexnet-mini",    "resnet-mini"};
}

ModelSpec preset(const std::string& name, std::size_t input_size) {
  const bool mini = name.find("-mini") != std::string::npos;
  const bool gru = name.size() > 4 && name.compare(name.size() - 4, 4, "-gru") == 0;
  const std::string family = name.substr(0, name.find('-'));
  if (input_size == 0) input_size = mini ? 16 : 96;
  SpecBuilder b;
  b.spec.name = name;
  b.spec.input_size = input_size;
  const GruHyper hyper = mini ? GruHyper{32, 32} : GruHyper{};

  if (mini) {
    if (family == "vgg") {
      b.conv(8, 3, 1, 1);
      b.conv(8, 3, 1, 1);
      b.pool(2, 2);
      b.conv(16, 3, 1, 1);
      b.conv(16, 3, 1, 1);
      b.pool(2, 2);
    } else if (family == "alexnet") {
      b.conv(8, 5, 1, 2);
      b.pool(2, 2);
      b.conv(16, 3, 1, 1);
      b.pool(2, 2);
      b.conv(16, 3, 1, 1);
    } else if (family == "resnet") {
      b.conv(8, 3, 1, 1);
      b.pool(2, 2);
      b.residual(8);
      b.residual(16);
      b.pool(2, 2);
    } else {
      throw UsageError("unknown model preset: " + name);
    }
  } else if (family == "vgg16") {
    vgg16_body(b);
  } else if (family == "alexnet") {
    alexnet_body(b, input_size);
  } else if (family == "resnet") {
    resnet_body(b);
  } else {
    throw UsageError("unknown model preset: " + name);
  }
  if (name != family + (mini ? "-mini" : "") + (gru ? "-gru" : ""))
    throw UsageError("unknown model preset: " + name);

  b.flatten();
  b.fc(hyper.fc_width);
  // AlexNet carries two fully connected layers before the recurrent part.
  if (family == "alexnet" || !gru) b.fc(hyper.fc_width);
  if (gru) b.gru(hyper.hidden_size, 2);
  b.head();
  infer_shapes(b.spec);
  return b.spec;
}

// ---- layers ----

Conv2dLayer::Conv2dLayer(const std::string& prefix, const LayerSpec& spec)
    : kernel(make_param(prefix + ".kernel", {spec.kernel_h, spec.kernel_w, spec.in_channels, spec.out_channels})),
      bias(make_param(prefix + ".bias", {spec.out_channels})),
      geom_{spec.stride, spec.padding} {}

Tensor Conv2dLayer::forward(const Tensor& x) {
  x_ = x;
  return ops::conv2d_forward(x, kernel.value, bias.value, geom_);
}

Tensor Conv2dLayer::backward(const Tensor& dy) {
  auto g = ops::conv2d_backward(x_, kernel.value, dy, geom_);
  accumulate(kernel, g.dk);
  accumulate(bias, g.db);
  return std::move(g.dx);
}

FcLayer::FcLayer(const std::string& prefix, std::size_t in, std::size_t out)
    : weight(make_param(prefix + ".weight", {in, out})), bias(make_param(prefix + ".bias", {out})) {}

Tensor FcLayer::forward(const Tensor& x) {
  x_ = x;
  return ops::fc_forward(x, weight.value, bias.value);
}

Tensor FcLayer::backward(const Tensor& dy) {
  auto g = ops::fc_backward(x_, weight.value, dy);
  accumulate(weight, g.dw);
  accumulate(bias, g.db);
  return std::move(g.dx);
}

Tensor MaxPoolLayer::forward(const Tensor& x) {
  x_shape_ = x.shape();
  auto r = ops::maxpool_forward(x, window_, stride_);
  argmax_ = std::move(r.argmax);
  return std::move(r.out);
}

Tensor MaxPoolLayer::backward(const Tensor& dy) { return ops::maxpool_backward(dy, argmax_, x_shape_); }

Tensor ReluLayer::forward(const Tensor& x) {
  x_ = x;
  return ops::relu_forward(x);
}

Tensor ReluLayer::backward(const Tensor& dy) { return ops::relu_backward(x_, dy); }

Tensor FlattenLayer::forward(const Tensor& x) {
  x_shape_ = x.shape();
  const std::size_t batch = x.dim(0);
  return x.reshaped({batch, x.size() / batch});
}

Tensor FlattenLayer::backward(const Tensor& dy) { return dy.reshaped(x_shape_); }

ResidualBlock::ResidualBlock(const std::string& prefix, std::size_t in_channels, std::size_t out_channels)
    : conv_a_kernel(make_param(prefix + ".conv_a.kernel", {3, 3, in_channels, out_channels})),
      conv_a_bias(make_param(prefix + ".conv_a.bias", {out_channels})),
      conv_b_kernel(make_param(prefix + ".conv_b.kernel", {3, 3, out_channels, out_channels})),
      conv_b_bias(make_param(prefix + ".conv_b.bias", {out_channels})) {
  if (in_channels != out_channels) {
    proj_kernel = std::make_unique<Parameter>(make_param(prefix + ".proj.kernel", {1, 1, in_channels, out_channels}));
    proj_bias = std::make_unique<Parameter>(make_param(prefix + ".proj.bias", {out_channels}));
  }
}

Tensor ResidualBlock::forward(const Tensor& x) {
  constexpr ops::ConvGeometry same{1, 1};
  x_ = x;
  a_ = ops::conv2d_forward(x, conv_a_kernel.value, conv_a_bias.value, same);
  a_relu_ = ops::relu_forward(a_);
  Tensor out = ops::conv2d_forward(a_relu_, conv_b_kernel.value, conv_b_bias.value, same);
  if (proj_kernel) {
    const Tensor skip = ops::conv2d_forward(x, proj_kernel->value, proj_bias->value, {1, 0});
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += skip[i];
  } else {
    if (x.shape() != out.shape()) throw ShapeError("residual_block: skip shape differs from block output");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += x[i];
  }
  return out;
}

Tensor ResidualBlock::backward(const Tensor& dy) {
  constexpr ops::ConvGeometry same{1, 1};
  auto gb = ops::conv2d_backward(a_relu_, conv_b_kernel.value, dy, same);
  accumulate(conv_b_kernel, gb.dk);
  accumulate(conv_b_bias, gb.db);
  const Tensor da = ops::relu_backward(a_, gb.dx);
  auto ga = ops::conv2d_backward(x_, conv_a_kernel.value, da, same);
  accumulate(conv_a_kernel, ga.dk);
  accumulate(conv_a_bias, ga.db);
  Tensor dx = std::move(ga.dx);
  if (proj_kernel) {
    auto gp = ops::conv2d_backward(x_, proj_kernel->value, dy, {1, 0});
    accumulate(*proj_kernel, gp.dk);
    accumulate(*proj_bias, gp.db);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += gp.dx[i];
  } else {
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
  }
  return dx;
}

std::vector<Parameter*> ResidualBlock::parameters() {
  std::vector<Parameter*> p{&conv_a_kernel, &conv_a_bias, &conv_b_kernel, &conv_b_bias};
  if (proj_kernel) {
    p.push_back(proj_kernel.get());
    p.push_back(proj_bias.get());
  }
  return p;
}

GruLayer::GruLayer(const std::string& prefix, std::size_t in, std::size_t hidden)
    : w_z(make_param(prefix + ".w_z", {in, hidden})),
      u_z(make_param(prefix + ".u_z", {hidden, hidden})),
      b_z(make_param(prefix + ".b_z", {hidden})),
      w_r(make_param(prefix + ".w_r", {in, hidden})),
      u_r(make_param(prefix + ".u_r", {hidden, hidden})),
      b_r(make_param(prefix + ".b_r", {hidden})),
      w_h(make_param(prefix + ".w_h", {in, hidden})),
      u_h(make_param(prefix + ".u_h", {hidden, hidden})),
      b_h(make_param(prefix + ".b_h", {hidden})),
      in_(in),
      hidden_(hidden) {}

ops::GruWeights GruLayer::weights() const {
  return {&w_z.value, &u_z.value, &b_z.value, &w_r.value, &u_r.value, &b_r.value, &w_h.value, &u_h.value, &b_h.value};
}

std::vector<Parameter*> GruLayer::parameters() { return {&w_z, &u_z, &b_z, &w_r, &u_r, &b_r, &w_h, &u_h, &b_h}; }

Tensor GruLayer::forward(const Tensor& x) {
  if (x.rank() != 3 || x.dim(2) != in_)
    throw ShapeError("gru layer: expected [n,l," + std::to_string(in_) + "], got " + shape_string(x.shape()));
  const std::size_t n = x.dim(0), l = x.dim(1);
  Tensor out({n, l, hidden_});
  Tensor h({n, hidden_});
  caches_.clear();
  caches_.reserve(l);
  const auto w = weights();
  for (std::size_t t = 0; t < l; ++t) {
    auto step = ops::gru_cell_forward(time_slice(x, t), h, w);
    write_time_slice(out, t, step.h);
    h = std::move(step.h);
    caches_.push_back(std::move(step.cache));
  }
  return out;
}

Tensor GruLayer::backward(const Tensor& dy) {
  const std::size_t n = dy.dim(0), l = dy.dim(1);
  Tensor dx({n, l, in_});
  Tensor dh_next({n, hidden_});
  const auto w = weights();
  for (std::size_t t = l; t-- > 0;) {
    Tensor dh = time_slice(dy, t);
    for (std::size_t i = 0; i < dh.size(); ++i) dh[i] += dh_next[i];
    auto g = ops::gru_cell_backward(caches_[t], w, dh);
    accumulate(w_z, g.dw_z);
    accumulate(u_z, g.du_z);
    accumulate(b_z, g.db_z);
    accumulate(w_r, g.dw_r);
    accumulate(u_r, g.du_r);
    accumulate(b_r, g.db_r);
    accumulate(w_h, g.dw_h);
    accumulate(u_h, g.du_h);
    accumulate(b_h, g.db_h);
    write_time_slice(dx, t, g.dx);
    dh_next = std::move(g.dh_prev);
  }
  return dx;
}

// ---- model ----

Model::Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  const auto ledger = infer_shapes(spec_);
  std::mt19937_64 rng(seed);
  std::size_t n_conv = 0, n_fc = 0, n_res = 0;
  Shape cur{spec_.input_size, spec_.input_size, 3};
  for (const auto& entry : ledger) {
    const LayerSpec& l = entry.layer;
    switch (l.kind) {
      case LayerKind::conv2d: {
        auto layer = std::make_unique<Conv2dLayer>("conv" + std::to_string(++n_conv), l);
        he_uniform(layer->kernel.value, l.kernel_h * l.kernel_w * l.in_channels, rng);
        frame_layers_.push_back(std::move(layer));
        break;
      }
      case LayerKind::residual_block: {
        auto block = std::make_unique<ResidualBlock>("res" + std::to_string(++n_res), l.in_channels, l.out_channels);
        he_uniform(block->conv_a_kernel.value, 9 * l.in_channels, rng);
        he_uniform(block->conv_b_kernel.value, 9 * l.out_channels, rng);
        if (block->proj_kernel) he_uniform(block->proj_kernel->value, l.in_channels, rng);
        frame_layers_.push_back(std::move(block));
        break;
      }
      case LayerKind::maxpool:
        frame_layers_.push_back(std::make_unique<MaxPoolLayer>(l.window, l.stride));
        break;
      case LayerKind::relu:
        frame_layers_.push_back(std::make_unique<ReluLayer>());
        break;
      case LayerKind::flatten:
        frame_layers_.push_back(std::make_unique<FlattenLayer>());
        break;
      case LayerKind::fc: {
        auto layer = std::make_unique<FcLayer>("fc" + std::to_string(++n_fc), cur[0], l.units);
        he_uniform(layer->weight.value, cur[0], rng);
        frame_layers_.push_back(std::move(layer));
        break;
      }
      case LayerKind::gru: {
        std::size_t in = cur[0];
        const double limit = 1.0 / std::sqrt(static_cast<double>(l.hidden_size));
        for (std::size_t k = 0; k < l.num_layers; ++k) {
          auto g = std::make_unique<GruLayer>("gru." + std::to_string(k), in, l.hidden_size);
          for (Parameter* p : {&g->w_z, &g->u_z, &g->w_r, &g->u_r, &g->w_h, &g->u_h}) uniform_fill(p->value, limit, rng);
          g->b_z.value.fill(-1.0);
          sequence_layers_.push_back(std::move(g));
          in = l.hidden_size;
        }
        break;
      }
      case LayerKind::output_head:
        head_ = std::make_unique<FcLayer>("head", cur[0], l.units);
        he_uniform(head_->weight.value, cur[0], rng);
        break;
    }
    cur = entry.output;
  }
}

Tensor Model::forward_sequence(const Tensor& x) {
  const std::size_t s = spec_.input_size;
  if (x.rank() != 5 || x.dim(2) != s || x.dim(3) != s || x.dim(4) != 3)
    throw ShapeError("model input must be [n,l," + std::to_string(s) + "," + std::to_string(s) + ",3], got " +
                     shape_string(x.shape()));
  n_ = x.dim(0);
  l_ = x.dim(1);
  Tensor h = x.reshaped({n_ * l_, s, s, 3});
  for (auto& layer : frame_layers_) h = layer->forward(h);
  if (!sequence_layers_.empty()) {
    h = std::move(h).reshaped({n_, l_, h.size() / (n_ * l_)});
    for (auto& layer : sequence_layers_) h = layer->forward(h);
    h = std::move(h).reshaped({n_ * l_, h.dim(2)});
  }
  return head_->forward(h).reshaped({n_, l_, 2});
}

void Model::backward(const Tensor& dpred) {
  require_shape(dpred, {n_, l_, 2}, "prediction gradient");
  Tensor d = head_->backward(dpred.reshaped({n_ * l_, 2}));
  if (!sequence_layers_.empty()) {
    d = std::move(d).reshaped({n_, l_, d.dim(1)});
    for (auto it = sequence_layers_.rbegin(); it != sequence_layers_.rend(); ++it) d = (*it)->backward(d);
    d = std::move(d).reshaped({n_ * l_, d.dim(2)});
  }
  for (auto it = frame_layers_.rbegin(); it != frame_layers_.rend(); ++it) d = (*it)->backward(d);
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  for (auto& layer : frame_layers_)
    for (Parameter* p : layer->parameters()) out.push_back(p);
  for (auto& layer : sequence_layers_)
    for (Parameter* p : layer->parameters()) out.push_back(p);
  for (Parameter* p : head_->parameters()) out.push_back(p);
  return out;
}

Parameter* Model::find(const std::string& name) {
  for (Parameter* p : parameters())
    if (p->name == name) return p;
  return nullptr;
}

void Model::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

}  // namespace affectlab::nn
