#include "spp/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "spp/errors.hpp"

namespace spp {

const char* activation_name(Activation a) { return a == Activation::kGelu ? "gelu" : "relu"; }

Activation parse_activation(const std::string& s) {
  if (s == "gelu") return Activation::kGelu;
  if (s == "relu") return Activation::kRelu;
  throw ConfigError("unknown activation '" + s + "' (expected gelu or relu)");
}

const char* pair_kind_name(PairKind k) {
  switch (k) {
    case PairKind::kQueryKey:
      return "qk";
    case PairKind::kValueProj:
      return "vproj";
    case PairKind::kMlp:
      return "mlp";
  }
  return "?";
}

PairKind parse_pair_kind(const std::string& s) {
  if (s == "qk") return PairKind::kQueryKey;
  if (s == "vproj") return PairKind::kValueProj;
  if (s == "mlp") return PairKind::kMlp;
  throw ConfigError("unknown pair kind '" + s + "'");
}

namespace {

void require_matrix(const Tensor& t, std::size_t rows, std::size_t cols, const std::string& what) {
  if (t.rank() != 2 || t.dim(0) != rows || t.dim(1) != cols) {
    throw ShapeError(what + ": expected [" + std::to_string(rows) + "x" + std::to_string(cols) + "], got " +
                     shape_str(t.shape()));
  }
}

Tensor random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(Shape{rows, cols});
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

Tensor keep_columns(const Tensor& w, std::span<const std::size_t> cols, std::span<const double> scale) {
  const auto rows = w.dim(0);
  Tensor out(Shape{rows, cols.size()});
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) out.at(i, j) = w.at(i, cols[j]) * scale[cols[j]];
  }
  return out;
}

Tensor keep_rows(const Tensor& w, std::span<const std::size_t> rows, std::span<const double> scale) {
  const auto cols = w.dim(1);
  Tensor out(Shape{rows.size(), cols});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols; ++j) out.at(i, j) = scale[rows[i]] * w.at(rows[i], j);
  }
  return out;
}

}  // namespace

void TransformerWeights::validate() const {
  const auto m = model_dim;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    const std::string where = "layer " + std::to_string(l);
    if (layer.heads.empty()) throw ShapeError(where + " has no attention heads");
    for (std::size_t h = 0; h < layer.heads.size(); ++h) {
      const auto& hd = layer.heads[h];
      const std::string hw = where + " head " + std::to_string(h);
      if (hd.query.rank() != 2) throw ShapeError(hw + " query is not a matrix");
      const auto d = hd.query.dim(1);
      require_matrix(hd.query, m, d, hw + " query");
      require_matrix(hd.key, m, d, hw + " key");
      if (hd.value.rank() != 2) throw ShapeError(hw + " value is not a matrix");
      const auto d1 = hd.value.dim(1);
      require_matrix(hd.value, m, d1, hw + " value");
      require_matrix(hd.proj, d1, m, hw + " proj");
    }
    if (layer.ffn_in.rank() != 2) throw ShapeError(where + " ffn_in is not a matrix");
    const auto dff = layer.ffn_in.dim(1);
    require_matrix(layer.ffn_in, m, dff, where + " ffn_in");
    require_matrix(layer.ffn_out, dff, m, where + " ffn_out");
    if (layer.ffn_bias.size() != dff) throw ShapeError(where + " ffn_bias length mismatch");
    if (!(layer.score_dim > 0.0)) throw ShapeError(where + " score_dim must be positive");
  }
  require_matrix(head_weight, m, classes, "classifier head");
  if (head_bias.size() != classes) throw ShapeError("classifier bias length mismatch");
}

TransformerWeights init_transformer(const ModelDims& dims, std::uint64_t seed) {
  if (dims.model_dim == 0 || dims.classes == 0 || (dims.layers > 0 && (dims.heads == 0 || dims.qk_dim == 0 ||
                                                                        dims.v_dim == 0 || dims.ffn_dim == 0))) {
    throw ConfigError("model dimensions must be positive");
  }
  std::mt19937_64 rng(seed);
  const double m = static_cast<double>(dims.model_dim);
  TransformerWeights w;
  w.model_dim = dims.model_dim;
  w.classes = dims.classes;
  w.activation = dims.activation;
  for (std::size_t l = 0; l < dims.layers; ++l) {
    TransformerLayer layer;
    layer.score_dim = static_cast<double>(dims.qk_dim);
    for (std::size_t h = 0; h < dims.heads; ++h) {
      AttentionHead hd;
      hd.query = random_matrix(rng, dims.model_dim, dims.qk_dim, 1.0 / std::sqrt(m));
      hd.key = random_matrix(rng, dims.model_dim, dims.qk_dim, 1.0 / std::sqrt(m));
      hd.value = random_matrix(rng, dims.model_dim, dims.v_dim, 1.0 / std::sqrt(m));
      hd.proj = random_matrix(rng, dims.v_dim, dims.model_dim,
                              1.0 / std::sqrt(static_cast<double>(dims.v_dim * dims.heads)));
      layer.heads.push_back(std::move(hd));
    }
    layer.ffn_in = random_matrix(rng, dims.model_dim, dims.ffn_dim, 1.0 / std::sqrt(m));
    layer.ffn_bias = Tensor(Shape{dims.ffn_dim}, 0.0);
    layer.ffn_out = random_matrix(rng, dims.ffn_dim, dims.model_dim, 1.0 / std::sqrt(static_cast<double>(dims.ffn_dim)));
    w.layers.push_back(std::move(layer));
  }
  w.head_weight = random_matrix(rng, dims.model_dim, dims.classes, 1.0 / std::sqrt(m));
  w.head_bias = Tensor(Shape{dims.classes}, 0.0);
  return w;
}

MaskLayout::MaskLayout(const TransformerWeights& model) : layers_(model.layers.size()), model_dim_(model.model_dim) {
  std::size_t off = 0;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    for (std::size_t h = 0; h < layer.heads.size(); ++h) {
      const auto n = layer.heads[h].query.dim(1);
      segments_.push_back({l, PairKind::kQueryKey, h, off, n});
      off += n;
    }
    for (std::size_t h = 0; h < layer.heads.size(); ++h) {
      const auto n = layer.heads[h].value.dim(1);
      segments_.push_back({l, PairKind::kValueProj, h, off, n});
      off += n;
    }
    const auto n = layer.ffn_in.dim(1);
    segments_.push_back({l, PairKind::kMlp, 0, off, n});
    off += n;
  }
  total_ = off;
}

MaskLayout MaskLayout::from_segments(std::vector<MaskSegment> segments, std::size_t layers, std::size_t model_dim) {
  MaskLayout l;
  std::size_t off = 0;
  for (const auto& s : segments) {
    if (s.offset != off) throw ShapeError("mask segments are not contiguous at offset " + std::to_string(off));
    if (s.layer >= layers) throw ShapeError("mask segment references layer " + std::to_string(s.layer));
    off += s.length;
  }
  l.segments_ = std::move(segments);
  l.total_ = off;
  l.layers_ = layers;
  l.model_dim_ = model_dim;
  return l;
}

const MaskSegment& MaskLayout::find(std::size_t layer, PairKind kind, std::size_t head) const {
  for (const auto& s : segments_) {
    if (s.layer == layer && s.kind == kind && s.head == head) return s;
  }
  throw LookupError("no mask segment for layer " + std::to_string(layer) + " pair " + pair_kind_name(kind) +
                    " head " + std::to_string(head));
}

std::size_t MaskLayout::params_per_entry(const MaskSegment& /*s*/) const {
  // Every pair couples an m-row column with an m-wide column or row.
  return 2 * model_dim_;
}

MaskSet MaskSet::filled(const MaskLayout& layout, double v) { return MaskSet{layout, std::vector<double>(layout.total(), v)}; }

void MaskSet::validate() const {
  if (values.size() != layout.total()) {
    throw ShapeError("mask set has " + std::to_string(values.size()) + " entries, layout expects " +
                     std::to_string(layout.total()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] >= 0.0 && values[i] <= 1.0)) {
      throw ValidationError("mask entry " + std::to_string(i) + " = " + std::to_string(values[i]) +
                            " lies outside [0, 1]");
    }
  }
}

ModelGraph ModelGraph::bind(Tape& tape, const TransformerWeights& model, bool weights_trainable,
                            const std::optional<Var>& mask) {
  ModelGraph g;
  g.model = &model;
  auto make = [&](const Tensor& t) { return tape.leaf(t, weights_trainable); };
  for (const auto& layer : model.layers) {
    LayerVars lv;
    for (const auto& hd : layer.heads) lv.heads.push_back({make(hd.query), make(hd.key), make(hd.value), make(hd.proj)});
    lv.ffn_in = make(layer.ffn_in);
    lv.ffn_bias = make(layer.ffn_bias);
    lv.ffn_out = make(layer.ffn_out);
    g.layers.push_back(std::move(lv));
  }
  g.head_weight = make(model.head_weight);
  g.head_bias = make(model.head_bias);
  if (mask) {
    g.layout = MaskLayout(model);
    if (mask->value().size() != g.layout.total()) {
      throw ShapeError("mask vector of " + std::to_string(mask->value().size()) + " entries, model needs " +
                       std::to_string(g.layout.total()));
    }
    g.mask = mask;
  }
  return g;
}

std::vector<Var> ModelGraph::weight_vars() const {
  std::vector<Var> out;
  for (const auto& lv : layers) {
    for (const auto& h : lv.heads) {
      out.push_back(h.query);
      out.push_back(h.key);
      out.push_back(h.value);
      out.push_back(h.proj);
    }
    out.push_back(lv.ffn_in);
    out.push_back(lv.ffn_bias);
    out.push_back(lv.ffn_out);
  }
  out.push_back(head_weight);
  out.push_back(head_bias);
  return out;
}

std::vector<Tensor*> weight_tensors(TransformerWeights& model) {
  std::vector<Tensor*> out;
  for (auto& layer : model.layers) {
    for (auto& h : layer.heads) {
      out.push_back(&h.query);
      out.push_back(&h.key);
      out.push_back(&h.value);
      out.push_back(&h.proj);
    }
    out.push_back(&layer.ffn_in);
    out.push_back(&layer.ffn_bias);
    out.push_back(&layer.ffn_out);
  }
  out.push_back(&model.head_weight);
  out.push_back(&model.head_bias);
  return out;
}

std::vector<const Tensor*> weight_tensors(const TransformerWeights& model) {
  auto mut = weight_tensors(const_cast<TransformerWeights&>(model));
  return {mut.begin(), mut.end()};
}

namespace {

std::optional<Var> mask_slice(const ModelGraph& g, std::size_t layer, PairKind kind, std::size_t head) {
  if (!g.mask) return std::nullopt;
  const auto& s = g.layout.find(layer, kind, head);
  return ad::slice(*g.mask, s.offset, s.length);
}

}  // namespace

Var attention_block(const ModelGraph& g, std::size_t layer, Var x, std::size_t tokens) {
  const auto& lw = g.model->layers.at(layer);
  const auto& lv = g.layers.at(layer);
  const auto rows = x.shape().at(0);
  if (tokens == 0 || rows % tokens != 0) throw ShapeError("attention input rows not a multiple of the token count");
  const auto batch = rows / tokens;
  const double inv_sqrt = 1.0 / std::sqrt(lw.score_dim);
  std::optional<Var> out;
  for (std::size_t h = 0; h < lw.heads.size(); ++h) {
    const auto& hv = lv.heads[h];
    Var wq = hv.query, wk = hv.key, wv = hv.value, wp = hv.proj;
    if (auto m = mask_slice(g, layer, PairKind::kQueryKey, h)) {
      wq = ad::scale_columns(wq, *m);
      wk = ad::scale_columns(wk, *m);
    }
    if (auto m = mask_slice(g, layer, PairKind::kValueProj, h)) {
      wv = ad::scale_columns(wv, *m);
      wp = ad::scale_rows(wp, *m);
    }
    const auto d = wq.shape()[1];
    const auto d1 = wv.shape()[1];
    Var q = ad::reshape(ad::matmul(x, wq), {batch, tokens, d});
    Var k = ad::reshape(ad::matmul(x, wk), {batch, tokens, d});
    Var scores = ad::scale(ad::bmm(q, k, /*transpose_b=*/true), inv_sqrt);
    Var attn = ad::softmax_rows(scores);
    Var v = ad::reshape(ad::matmul(x, wv), {batch, tokens, d1});
    Var ctx = ad::reshape(ad::bmm(attn, v), {rows, d1});
    Var head_out = ad::matmul(ctx, wp);
    out = out ? ad::add(*out, head_out) : head_out;
  }
  return *out;
}

Var ffn_block(const ModelGraph& g, std::size_t layer, Var x) {
  const auto& lv = g.layers.at(layer);
  Var win = lv.ffn_in, wout = lv.ffn_out;
  if (auto m = mask_slice(g, layer, PairKind::kMlp, 0)) {
    win = ad::scale_columns(win, *m);
    wout = ad::scale_rows(wout, *m);
  }
  Var pre = ad::add_row_bias(ad::matmul(x, win), lv.ffn_bias);
  Var hidden = g.model->activation == Activation::kGelu ? ad::gelu(pre) : ad::relu(pre);
  return ad::matmul(hidden, wout);
}

Var logits_graph(const ModelGraph& g, Var x, std::size_t tokens) {
  if (x.shape().size() != 2 || x.shape()[1] != g.model->model_dim) {
    throw ShapeError("model input " + shape_str(x.shape()) + " does not have width " +
                     std::to_string(g.model->model_dim));
  }
  Var h = x;
  for (std::size_t l = 0; l < g.model->layers.size(); ++l) {
    h = ad::add(h, attention_block(g, l, h, tokens));
    h = ad::add(h, ffn_block(g, l, h));
  }
  Var pooled = ad::mean_tokens(h, tokens);
  return ad::add_row_bias(ad::matmul(pooled, g.head_weight), g.head_bias);
}

namespace {

void check_masks(const TransformerWeights& model, const MaskSet& masks) {
  if (!(masks.layout == MaskLayout(model))) throw ShapeError("mask layout does not match the model");
  masks.validate();
}

void check_sequence(const Tensor& x, const TransformerWeights& model) {
  if (x.rank() != 2 || x.dim(1) != model.model_dim || x.dim(0) == 0) {
    throw ShapeError("sequence input " + shape_str(x.shape()) + " incompatible with model width " +
                     std::to_string(model.model_dim));
  }
}

}  // namespace

Tensor masked_attention_forward(const Tensor& x, const TransformerWeights& model, std::size_t layer,
                                const MaskSet& masks) {
  check_sequence(x, model);
  check_masks(model, masks);
  Tape tape;
  Var mv = tape.constant(Tensor::vector(masks.values));
  auto g = ModelGraph::bind(tape, model, false, mv);
  return attention_block(g, layer, tape.constant(x), x.dim(0)).value();
}

Tensor masked_ffn_forward(const Tensor& x, const TransformerWeights& model, std::size_t layer,
                          const MaskSet& masks) {
  check_sequence(x, model);
  check_masks(model, masks);
  Tape tape;
  Var mv = tape.constant(Tensor::vector(masks.values));
  auto g = ModelGraph::bind(tape, model, false, mv);
  return ffn_block(g, layer, tape.constant(x)).value();
}

Tensor model_forward(const Tensor& inputs, const TransformerWeights& model, const MaskSet* masks) {
  if (inputs.rank() != 3 || inputs.dim(2) != model.model_dim) {
    throw ShapeError("model_forward expects [B x t x " + std::to_string(model.model_dim) + "], got " +
                     shape_str(inputs.shape()));
  }
  const auto batch = inputs.dim(0), tokens = inputs.dim(1);
  if (batch == 0) return Tensor(Shape{0, model.classes});
  Tape tape;
  std::optional<Var> mv;
  if (masks) {
    check_masks(model, *masks);
    mv = tape.constant(Tensor::vector(masks->values));
  }
  auto g = ModelGraph::bind(tape, model, false, mv);
  Var x = tape.constant(inputs.reshaped({batch * tokens, model.model_dim}));
  return logits_graph(g, x, tokens).value();
}

CostReport count_cost(const TransformerWeights& model, std::size_t tokens) {
  CostReport r;
  const auto m = model.model_dim;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    for (std::size_t h = 0; h < layer.heads.size(); ++h) {
      const auto d = layer.heads[h].query.dim(1);
      r.pairs.push_back({l, PairKind::kQueryKey, h, d});
    }
    for (std::size_t h = 0; h < layer.heads.size(); ++h) {
      const auto d1 = layer.heads[h].value.dim(1);
      r.pairs.push_back({l, PairKind::kValueProj, h, d1});
    }
    const auto dff = layer.ffn_in.dim(1);
    r.pairs.push_back({l, PairKind::kMlp, 0, dff});
  }
  for (const auto& p : r.pairs) {
    const auto n = p.retained;
    r.maskable_params += 2 * m * n;
    switch (p.kind) {
      case PairKind::kQueryKey:
        // two projections plus this head's share of the score product
        r.attention_macs += 2 * m * n + tokens * n;
        break;
      case PairKind::kValueProj:
        // value projection, attention-weighted sum, output projection
        r.attention_macs += m * n + tokens * n + n * m;
        break;
      case PairKind::kMlp:
        r.mlp_macs += 2 * m * n;
        r.params += n;  // hidden bias follows its unit
        break;
    }
  }
  r.params += r.maskable_params + m * model.classes + model.classes;
  r.head_macs = m * model.classes;
  return r;
}

CompactModel compact(const TransformerWeights& model, const MaskSet& masks, double threshold, EmptyPairPolicy policy) {
  if (!(threshold >= 0.0)) throw ValidationError("compaction threshold must be >= 0");
  check_masks(model, masks);
  CompactModel out;
  out.weights = model;
  const auto& layout = masks.layout;

  auto select = [&](const MaskSegment& s) {
    const auto vals = masks.segment(s);
    std::vector<std::size_t> keep;
    for (std::size_t j = 0; j < vals.size(); ++j) {
      if (std::abs(vals[j]) > threshold) keep.push_back(j);
    }
    if (keep.empty()) {
      const std::string name = "layer " + std::to_string(s.layer) + " pair " + pair_kind_name(s.kind) +
                               (s.kind == PairKind::kMlp ? std::string() : " head " + std::to_string(s.head));
      if (policy == EmptyPairPolicy::kError) throw DegeneratePairError(name + " has empty support");
      const auto it = std::max_element(vals.begin(), vals.end());
      keep.push_back(static_cast<std::size_t>(it - vals.begin()));
      out.warnings.push_back(name + " has empty support; keeping column " + std::to_string(keep.back()));
    }
    return keep;
  };

  out.retained.resize(layout.segments().size());
  for (std::size_t si = 0; si < layout.segments().size(); ++si) {
    const auto& s = layout.segments()[si];
    auto keep = select(s);
    const auto scale = masks.segment(s);
    auto& layer = out.weights.layers[s.layer];
    const auto& src = model.layers[s.layer];
    switch (s.kind) {
      case PairKind::kQueryKey: {
        auto& hd = layer.heads[s.head];
        hd.query = keep_columns(src.heads[s.head].query, keep, scale);
        hd.key = keep_columns(src.heads[s.head].key, keep, scale);
        break;
      }
      case PairKind::kValueProj: {
        auto& hd = layer.heads[s.head];
        hd.value = keep_columns(src.heads[s.head].value, keep, scale);
        hd.proj = keep_rows(src.heads[s.head].proj, keep, scale);
        break;
      }
      case PairKind::kMlp: {
        layer.ffn_in = keep_columns(src.ffn_in, keep, scale);
        layer.ffn_out = keep_rows(src.ffn_out, keep, scale);
        Tensor bias(Shape{keep.size()});
        for (std::size_t j = 0; j < keep.size(); ++j) bias[j] = src.ffn_bias[keep[j]];
        layer.ffn_bias = std::move(bias);
        break;
      }
    }
    out.retained[si] = std::move(keep);
  }
  return out;
}

}  // namespace spp
