#include "l2sa/model.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>

#include "l2sa/random.hpp"

namespace l2sa::model {
namespace {

std::string padding_name(ops::Padding p) { return p == ops::Padding::Same ? "same" : "valid"; }

ops::Padding parse_padding(const std::string& s) {
  if (s == "same") return ops::Padding::Same;
  if (s == "valid") return ops::Padding::Valid;
  throw Error(ErrorKind::Format, "graph: unknown padding '" + s + "'");
}

Layer conv_layer(std::string name, std::size_t in, std::size_t out, std::size_t k) {
  Layer l;
  l.kind = LayerKind::Conv;
  l.name = std::move(name);
  l.conv = ops::ConvSpec{in, out, k, 1, ops::Padding::Same};
  return l;
}

Layer simple(LayerKind kind) {
  Layer l;
  l.kind = kind;
  return l;
}

Layer pool_layer(std::size_t k) {
  Layer l = simple(LayerKind::MaxPool);
  l.pool = ops::Pool2d::square(k);
  return l;
}

Layer attention_layer(std::string name, attention::Kind kind, std::size_t kernel, std::size_t site) {
  if (kernel < 1) throw Error(ErrorKind::Config, "attention kernel must be >= 1");
  Layer l = simple(LayerKind::Attention);
  l.name = std::move(name);
  l.attention = kind;
  l.attention_kernel = kernel;
  l.site = site;
  return l;
}

Layer dense_layer(std::string name, std::size_t in, std::size_t out) {
  Layer l = simple(LayerKind::Dense);
  l.name = std::move(name);
  l.dense_in = in;
  l.dense_out = out;
  return l;
}

void check_backbone(const BackboneConfig& b) {
  if (b.channels.empty() || b.channels.size() != b.kernels.size() || b.channels.size() != b.pools.size()) {
    throw Error(ErrorKind::Config, "backbone: channels, kernels and pools must have equal nonzero length");
  }
}

// Flatten and classifier head: dense(head_width) -> relu -> dense(classes).
void append_head(LayerGraph& g, std::size_t head_width) {
  const std::vector<Shape> shapes = infer_shapes(g);
  const std::size_t features = shapes.back().numel();
  g.layers.push_back(simple(LayerKind::Flatten));
  g.layers.push_back(dense_layer("fc1", features, head_width));
  g.layers.push_back(simple(LayerKind::Relu));
  g.layers.push_back(dense_layer("fc2", head_width, g.class_count));
}

LayerGraph backbone_graph(const std::string& name, InputSpec input, std::size_t classes, const BackboneConfig& b,
                          attention::Kind kind, const std::vector<std::size_t>& attention_kernels) {
  check_backbone(b);
  LayerGraph g;
  g.model_name = name;
  g.input = input;
  g.class_count = classes;
  std::size_t in = input.channels;
  const std::string prefix = kind == attention::Kind::CbamSpatial ? "cbam" : "sab";
  for (std::size_t s = 0; s < b.channels.size(); ++s) {
    const std::string idx = std::to_string(s + 1);
    g.layers.push_back(conv_layer("conv" + idx, in, b.channels[s], b.kernels[s]));
    g.layers.push_back(simple(LayerKind::Relu));
    if (kind != attention::Kind::None) {
      g.layers.push_back(attention_layer(prefix + idx, kind, attention_kernels[s], s));
    }
    g.layers.push_back(pool_layer(b.pools[s]));
    in = b.channels[s];
  }
  append_head(g, b.head_width);
  return g;
}

std::size_t index_of(std::istringstream& is, const std::string& what) {
  long long v = -1;
  if (!(is >> v) || v < 0) throw Error(ErrorKind::Format, "graph: bad " + what);
  return std::size_t(v);
}

// Runs layers [begin, end). Skips must not cross the range boundary.
template <typename Backend>
typename Backend::Value run(const LayerGraph& g, const Backend& be, typename Backend::Value x, std::size_t begin,
                            std::size_t end) {
  using V = typename Backend::Value;
  std::vector<std::optional<V>> maps(g.attention_sites());
  for (std::size_t li = begin; li < end; ++li) {
    const Layer& layer = g.layers[li];
    switch (layer.kind) {
      case LayerKind::Conv:
        x = be.conv2d(x, be.param(layer.name + ".weight"), be.param(layer.name + ".bias"), layer.conv);
        break;
      case LayerKind::Relu:
        x = be.relu(x);
        break;
      case LayerKind::MaxPool:
        x = be.maxpool2d(x, layer.pool);
        break;
      case LayerKind::Flatten:
        x = be.flatten(x);
        break;
      case LayerKind::Dense:
        x = be.dense(x, be.param(layer.name + ".weight"), be.param(layer.name + ".bias"));
        break;
      case LayerKind::Attention: {
        const auto& w = be.param(layer.name + ".weight");
        const auto& b = be.param(layer.name + ".bias");
        V map = layer.attention == attention::Kind::CbamSpatial
                    ? attention::cbam_spatial_attention(be, x, w, b, layer.attention_kernel)
                    : attention::l2_sab_attention(be, x, w, b, attention::L2SabConfig{layer.attention_kernel});
        V combined = map;
        for (const Skip& skip : g.skips) {
          if (skip.dest_site != layer.site) continue;
          V routed = *maps.at(skip.source_site);
          const std::size_t factor = be.value(routed).height() / be.value(map).height();
          if (factor > 1) routed = be.avgpool2d(routed, ops::Pool2d::square(factor));
          combined = be.mul(combined, routed);
        }
        maps[layer.site] = map;
        x = be.gate(combined, x);
        break;
      }
    }
  }
  return x;
}

}  // namespace

std::size_t Layer::parameter_count() const {
  switch (kind) {
    case LayerKind::Conv: return conv.parameter_count();
    case LayerKind::Dense: return dense_in * dense_out + dense_out;
    case LayerKind::Attention: return attention::weight_shape(attention, attention_kernel).numel() + 1;
    default: return 0;
  }
}

std::size_t LayerGraph::attention_sites() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.kind == LayerKind::Attention;
  return n;
}

std::string LayerGraph::describe() const {
  std::ostringstream os;
  os << "model " << model_name << '\n'
     << "input " << input.channels << ' ' << input.height << ' ' << input.width << '\n'
     << "classes " << class_count << '\n';
  for (const Layer& l : layers) {
    switch (l.kind) {
      case LayerKind::Conv:
        os << "conv " << l.name << ' ' << l.conv.in_channels << ' ' << l.conv.out_channels << ' ' << l.conv.kernel
           << ' ' << l.conv.stride << ' ' << padding_name(l.conv.padding) << '\n';
        break;
      case LayerKind::Relu: os << "relu\n"; break;
      case LayerKind::MaxPool:
        os << "maxpool " << l.pool.window_h << ' ' << l.pool.window_w << ' ' << l.pool.stride_h << ' '
           << l.pool.stride_w << '\n';
        break;
      case LayerKind::Attention:
        os << "attention " << l.name << ' ' << attention::to_string(l.attention) << ' ' << l.attention_kernel << ' '
           << l.site << '\n';
        break;
      case LayerKind::Flatten: os << "flatten\n"; break;
      case LayerKind::Dense: os << "dense " << l.name << ' ' << l.dense_in << ' ' << l.dense_out << '\n'; break;
    }
  }
  for (const Skip& s : skips) os << "skip " << s.label << ' ' << s.source_site << ' ' << s.dest_site << '\n';
  return os.str();
}

LayerGraph LayerGraph::parse(const std::string& text) {
  LayerGraph g;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string key;
    is >> key;
    if (key == "model") {
      is >> g.model_name;
    } else if (key == "input") {
      g.input.channels = index_of(is, "input channels");
      g.input.height = index_of(is, "input height");
      g.input.width = index_of(is, "input width");
    } else if (key == "classes") {
      g.class_count = index_of(is, "class count");
    } else if (key == "conv") {
      Layer l = simple(LayerKind::Conv);
      std::string pad;
      is >> l.name;
      l.conv.in_channels = index_of(is, "conv in_channels");
      l.conv.out_channels = index_of(is, "conv out_channels");
      l.conv.kernel = index_of(is, "conv kernel");
      l.conv.stride = index_of(is, "conv stride");
      is >> pad;
      l.conv.padding = parse_padding(pad);
      g.layers.push_back(l);
    } else if (key == "relu") {
      g.layers.push_back(simple(LayerKind::Relu));
    } else if (key == "maxpool") {
      Layer l = simple(LayerKind::MaxPool);
      l.pool.window_h = index_of(is, "pool window");
      l.pool.window_w = index_of(is, "pool window");
      l.pool.stride_h = index_of(is, "pool stride");
      l.pool.stride_w = index_of(is, "pool stride");
      g.layers.push_back(l);
    } else if (key == "attention") {
      std::string name, kind;
      is >> name >> kind;
      const std::size_t k = index_of(is, "attention kernel");
      const std::size_t site = index_of(is, "attention site");
      g.layers.push_back(attention_layer(name, attention::parse_kind(kind), k, site));
    } else if (key == "flatten") {
      g.layers.push_back(simple(LayerKind::Flatten));
    } else if (key == "dense") {
      std::string name;
      is >> name;
      const std::size_t in = index_of(is, "dense inputs");
      const std::size_t out = index_of(is, "dense outputs");
      g.layers.push_back(dense_layer(name, in, out));
    } else if (key == "skip") {
      Skip s;
      is >> s.label;
      s.source_site = index_of(is, "skip source");
      s.dest_site = index_of(is, "skip destination");
      g.skips.push_back(s);
    } else {
      throw Error(ErrorKind::Format, "graph: unknown record '" + key + "'");
    }
  }
  if (g.model_name.empty() || g.layers.empty()) throw Error(ErrorKind::Format, "graph: missing model or layers");
  infer_shapes(g);
  return g;
}

LayerGraph build_baseline(InputSpec input, std::size_t classes, const BackboneConfig& backbone) {
  return backbone_graph("baseline", input, classes, backbone, attention::Kind::None, {});
}

LayerGraph build_l2sa(InputSpec input, std::size_t classes, const std::vector<std::size_t>& sab_kernels,
                      bool skips_enabled, const BackboneConfig& backbone) {
  check_backbone(backbone);
  if (sab_kernels.size() != backbone.channels.size()) {
    throw Error(ErrorKind::Config, "l2sa: " + std::to_string(sab_kernels.size()) + " attention kernels for " +
                                       std::to_string(backbone.channels.size()) + " attention sites");
  }
  LayerGraph g = backbone_graph(skips_enabled ? "l2sa" : "l2sa_noskip", input, classes, backbone,
                                attention::Kind::L2Sab, sab_kernels);
  if (skips_enabled && backbone.channels.size() >= 3) {
    g.skips = {{"A", 0, 1}, {"B", 1, 2}, {"C", 0, 2}};
    infer_shapes(g);
  }
  return g;
}

LayerGraph build_baseline_cbam(InputSpec input, std::size_t classes, std::size_t kernel,
                               const BackboneConfig& backbone) {
  check_backbone(backbone);
  return backbone_graph("baseline_cbam", input, classes, backbone, attention::Kind::CbamSpatial,
                        std::vector<std::size_t>(backbone.channels.size(), kernel));
}

LayerGraph build_vgg16_star(InputSpec input, std::size_t classes, const VggConfig& vgg) {
  LayerGraph g;
  g.model_name = "vgg16_star";
  g.input = input;
  g.class_count = classes;
  std::size_t in = input.channels;
  for (std::size_t b = 0; b < vgg.channels.size(); ++b) {
    for (std::size_t c = 0; c < vgg.convs_per_block; ++c) {
      g.layers.push_back(conv_layer("conv" + std::to_string(b + 1) + "_" + std::to_string(c + 1), in,
                                    vgg.channels[b], vgg.kernel));
      g.layers.push_back(simple(LayerKind::Relu));
      in = vgg.channels[b];
    }
    g.layers.push_back(pool_layer(2));
  }
  append_head(g, vgg.head_width);
  return g;
}

LayerGraph build_named(const std::string& name, InputSpec input, std::size_t classes,
                       const std::vector<std::size_t>& sab_kernels, const BackboneConfig& backbone) {
  if (name == "baseline") return build_baseline(input, classes, backbone);
  if (name == "l2sa") return build_l2sa(input, classes, sab_kernels, true, backbone);
  if (name == "l2sa_noskip") return build_l2sa(input, classes, sab_kernels, false, backbone);
  if (name == "baseline_cbam") return build_baseline_cbam(input, classes, kDefaultCbamKernel, backbone);
  if (name == "vgg16_star") {
    VggConfig vgg;
    vgg.head_width = backbone.head_width;
    return build_vgg16_star(input, classes, vgg);
  }
  throw Error(ErrorKind::Config,
              "unknown model '" + name + "' (expected baseline, l2sa, l2sa_noskip, baseline_cbam, vgg16_star)");
}

std::size_t count_parameters(const LayerGraph& graph) {
  std::size_t n = 0;
  for (const auto& l : graph.layers) n += l.parameter_count();
  return n;
}

std::vector<Shape> infer_shapes(const LayerGraph& graph, std::size_t batch) {
  const char* op = "infer_shapes";
  std::vector<Shape> shapes;
  std::vector<std::optional<Shape>> site_shapes(graph.attention_sites());
  Shape cur{batch, graph.input.channels, graph.input.height, graph.input.width};
  auto require_nchw = [&](const Layer& l) {
    if (cur.rank() != 4) throw ShapeError(op, "rank", "layer '" + l.name + "' needs NCHW input, got " + cur.str());
  };
  for (const Layer& l : graph.layers) {
    switch (l.kind) {
      case LayerKind::Conv: {
        require_nchw(l);
        l.conv.validate();
        if (cur[1] != l.conv.in_channels) {
          throw ShapeError(op, "channels", l.name + " expects " + std::to_string(l.conv.in_channels) + ", got " +
                                               std::to_string(cur[1]));
        }
        if (l.conv.padding == ops::Padding::Valid && (cur[2] < l.conv.kernel || cur[3] < l.conv.kernel)) {
          throw ShapeError(op, "height/width", l.name + " kernel larger than input " + cur.str());
        }
        cur = Shape{batch, l.conv.out_channels, l.conv.output_extent(cur[2]), l.conv.output_extent(cur[3])};
        break;
      }
      case LayerKind::Relu: break;
      case LayerKind::MaxPool:
        require_nchw(l);
        if (l.pool.window_h > cur[2]) throw ShapeError(op, "height", "pool window larger than input " + cur.str());
        if (l.pool.window_w > cur[3]) throw ShapeError(op, "width", "pool window larger than input " + cur.str());
        cur = Shape{batch, cur[1], l.pool.out_h(cur[2]), l.pool.out_w(cur[3])};
        break;
      case LayerKind::Attention: {
        require_nchw(l);
        if (l.site >= site_shapes.size() || site_shapes[l.site]) {
          throw ShapeError(op, "site", "attention site " + std::to_string(l.site) + " invalid or repeated");
        }
        site_shapes[l.site] = cur;
        break;
      }
      case LayerKind::Flatten:
        cur = Shape{batch, cur.numel() / batch};
        break;
      case LayerKind::Dense:
        if (cur.rank() != 2 || cur[1] != l.dense_in) {
          throw ShapeError(op, "features", l.name + " expects " + std::to_string(l.dense_in) + " inputs, got " + cur.str());
        }
        cur = Shape{batch, l.dense_out};
        break;
    }
    shapes.push_back(cur);
  }
  const bool has_head = !graph.layers.empty() && graph.layers.back().kind == LayerKind::Dense;
  if (has_head && (cur.rank() != 2 || cur[1] != graph.class_count)) {
    throw ShapeError(op, "classes", "final output " + cur.str() + " does not match " +
                                        std::to_string(graph.class_count) + " classes");
  }
  for (const Skip& s : graph.skips) {
    if (s.source_site >= s.dest_site || s.dest_site >= site_shapes.size()) {
      throw ShapeError(op, "skip", "skip " + s.label + " must route an earlier site to a later one");
    }
    const Shape& src = *site_shapes[s.source_site];
    const Shape& dst = *site_shapes[s.dest_site];
    const std::size_t f = src[2] / dst[2];
    if (f == 0 || src[3] / dst[3] != f || src[2] != dst[2] * f || src[3] != dst[3] * f) {
      throw ShapeError(op, "skip", "skip " + s.label + " cannot downsample " + src.str() + " to " + dst.str());
    }
  }
  return shapes;
}

std::vector<std::pair<std::string, Shape>> parameter_slots(const LayerGraph& graph) {
  std::vector<std::pair<std::string, Shape>> slots;
  for (const Layer& l : graph.layers) {
    switch (l.kind) {
      case LayerKind::Conv:
        slots.emplace_back(l.name + ".weight", Shape{l.conv.out_channels, l.conv.in_channels, l.conv.kernel, l.conv.kernel});
        slots.emplace_back(l.name + ".bias", Shape{l.conv.out_channels});
        break;
      case LayerKind::Attention:
        slots.emplace_back(l.name + ".weight", attention::weight_shape(l.attention, l.attention_kernel));
        slots.emplace_back(l.name + ".bias", Shape{1});
        break;
      case LayerKind::Dense:
        slots.emplace_back(l.name + ".weight", Shape{l.dense_in, l.dense_out});
        slots.emplace_back(l.name + ".bias", Shape{l.dense_out});
        break;
      default: break;
    }
  }
  return slots;
}

ParameterSet init_parameters(const LayerGraph& graph, std::uint64_t seed) {
  Rng rng(seed);
  ParameterSet params;
  for (const auto& [name, shape] : parameter_slots(graph)) {
    if (shape.rank() == 1) {
      params.add(name, Tensor(shape));
      continue;
    }
    std::size_t fan_in = 0, fan_out = 0;
    if (shape.rank() == 4) {
      const std::size_t field = shape[2] * shape[3];
      fan_in = shape[1] * field;
      fan_out = shape[0] * field;
    } else {
      fan_in = shape[0];
      fan_out = shape[1];
    }
    const Real limit = std::sqrt(Real(6) / Real(fan_in + fan_out));
    params.add(name, rng.uniform_tensor(shape, -limit, limit));
  }
  return params;
}

Tensor predict(const LayerGraph& graph, const ParameterSet& params, const Tensor& batch) {
  const Eager be(params);
  const std::size_t layers = graph.layers.size();
  const auto flatten = std::find_if(graph.layers.begin(), graph.layers.end(),
                                    [](const Layer& l) { return l.kind == LayerKind::Flatten; });
  if (flatten == graph.layers.end() || batch.shape().rank() != 4 || batch.batch() == 1) {
    return run(graph, be, batch, 0, layers);
  }
  // The convolutional trunk runs in chunks bounded by kActivationBudget; the
  // dense head then sees the whole batch.
  const std::size_t split = std::size_t(flatten - graph.layers.begin()) + 1;
  std::size_t per_sample = batch.size() / batch.batch();
  for (const Shape& s : infer_shapes(graph, 1)) per_sample = std::max(per_sample, s.numel());
  const std::size_t n = batch.batch();
  const std::size_t chunk = std::clamp<std::size_t>(kActivationBudget / per_sample, 1, n);
  if (chunk == n) return run(graph, be, batch, 0, layers);

  const std::size_t stride = batch.size() / n;
  const Shape& in = batch.shape();
  std::vector<Real> features;
  std::size_t width = 0;
  for (std::size_t s = 0; s < n; s += chunk) {
    const std::size_t c = std::min(chunk, n - s);
    const Real* src = batch.ptr() + s * stride;
    const Tensor part(Shape{c, in[1], in[2], in[3]}, std::vector<Real>(src, src + c * stride));
    const Tensor f = run(graph, be, part, 0, split);
    width = f.size() / c;
    features.insert(features.end(), f.ptr(), f.ptr() + f.size());
  }
  return run(graph, be, Tensor(Shape{n, width}, std::move(features)), split, layers);
}

Var forward(const LayerGraph& graph, Tape& tape, const ParameterSet& params, Var batch) {
  return run(graph, Recorder(tape, params), batch, 0, graph.layers.size());
}

}  // namespace l2sa::model
