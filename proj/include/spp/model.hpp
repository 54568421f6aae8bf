#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spp/autodiff.hpp"
#include "spp/tensor.hpp"

namespace spp {

enum class Activation { kGelu, kRelu };
enum class PairKind { kQueryKey, kValueProj, kMlp };

const char* activation_name(Activation a);
Activation parse_activation(const std::string& s);
const char* pair_kind_name(PairKind k);
PairKind parse_pair_kind(const std::string& s);

struct ModelDims {
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t model_dim = 8;  // m, also the FFN width n (residual stream)
  std::size_t qk_dim = 4;     // d
  std::size_t v_dim = 4;      // d1
  std::size_t ffn_dim = 16;
  std::size_t classes = 3;
  Activation activation = Activation::kGelu;
};

struct AttentionHead {
  Tensor query;  // m x d_h
  Tensor key;    // m x d_h
  Tensor value;  // m x d1_h
  Tensor proj;   // d1_h x m

  friend bool operator==(const AttentionHead&, const AttentionHead&) = default;
};

struct TransformerLayer {
  std::vector<AttentionHead> heads;
  // Attention logits are divided by sqrt(score_dim). Pruning leaves it at the
  // original d so masked and compacted models agree.
  double score_dim = 1.0;
  Tensor ffn_in;    // m x d_ff
  Tensor ffn_bias;  // d_ff, never masked
  Tensor ffn_out;   // d_ff x m

  friend bool operator==(const TransformerLayer&, const TransformerLayer&) = default;
};

// Head widths may differ between heads once a model has been compacted.
struct TransformerWeights {
  std::size_t model_dim = 0;
  std::size_t classes = 0;
  Activation activation = Activation::kGelu;
  std::vector<TransformerLayer> layers;
  Tensor head_weight;  // m x classes
  Tensor head_bias;    // classes

  void validate() const;
  friend bool operator==(const TransformerWeights&, const TransformerWeights&) = default;
};

TransformerWeights init_transformer(const ModelDims& dims, std::uint64_t seed);

// One contiguous run of mask entries gating one coupled pair.
struct MaskSegment {
  std::size_t layer = 0;
  PairKind kind = PairKind::kQueryKey;
  std::size_t head = 0;  // 0 for the MLP pair
  std::size_t offset = 0;
  std::size_t length = 0;

  friend bool operator==(const MaskSegment&, const MaskSegment&) = default;
};

// Flat mask ordering: layer-major; within a layer, the query-key masks of every
// head, then the value-projection masks of every head, then the MLP mask.
class MaskLayout {
 public:
  MaskLayout() = default;
  explicit MaskLayout(const TransformerWeights& model);
  // Rebuilds a persisted layout; segments must be contiguous from offset 0.
  static MaskLayout from_segments(std::vector<MaskSegment> segments, std::size_t layers, std::size_t model_dim);

  const std::vector<MaskSegment>& segments() const { return segments_; }
  std::size_t total() const { return total_; }
  std::size_t layers() const { return layers_; }
  const MaskSegment& find(std::size_t layer, PairKind kind, std::size_t head = 0) const;
  // Number of model parameters gated by a single entry of segment `s`.
  std::size_t params_per_entry(const MaskSegment& s) const;
  std::size_t model_dim() const { return model_dim_; }

  friend bool operator==(const MaskLayout&, const MaskLayout&) = default;

 private:
  std::vector<MaskSegment> segments_;
  std::size_t total_ = 0;
  std::size_t layers_ = 0;
  std::size_t model_dim_ = 0;
};

struct MaskSet {
  MaskLayout layout;
  std::vector<double> values;

  static MaskSet filled(const MaskLayout& layout, double v);
  static MaskSet ones(const MaskLayout& layout) { return filled(layout, 1.0); }

  std::span<const double> segment(const MaskSegment& s) const { return std::span(values).subspan(s.offset, s.length); }
  std::span<double> segment(const MaskSegment& s) { return std::span(values).subspan(s.offset, s.length); }
  // Throws ValidationError unless every entry lies in [0, 1] and sizes match.
  void validate() const;
};

// Binds every model tensor to a tape, either as a trainable leaf or as a
// constant, plus an optional flat mask leaf.
struct ModelGraph {
  struct HeadVars {
    Var query, key, value, proj;
  };
  struct LayerVars {
    std::vector<HeadVars> heads;
    Var ffn_in, ffn_bias, ffn_out;
  };
  const TransformerWeights* model = nullptr;
  std::vector<LayerVars> layers;
  Var head_weight, head_bias;
  std::optional<Var> mask;
  MaskLayout layout;

  static ModelGraph bind(Tape& tape, const TransformerWeights& model, bool weights_trainable,
                         const std::optional<Var>& mask = std::nullopt);
  // Trainable weight leaves in a fixed order (matches weight_tensors()).
  std::vector<Var> weight_vars() const;
};

std::vector<Tensor*> weight_tensors(TransformerWeights& model);
std::vector<const Tensor*> weight_tensors(const TransformerWeights& model);

// Graph builders. `x` holds B*tokens rows of width m, sample-major.
Var attention_block(const ModelGraph& g, std::size_t layer, Var x, std::size_t tokens);
Var ffn_block(const ModelGraph& g, std::size_t layer, Var x);
Var logits_graph(const ModelGraph& g, Var x, std::size_t tokens);

// Value-level operations on a single sequence x [t x m].
Tensor masked_attention_forward(const Tensor& x, const TransformerWeights& model, std::size_t layer,
                                const MaskSet& masks);
Tensor masked_ffn_forward(const Tensor& x, const TransformerWeights& model, std::size_t layer,
                          const MaskSet& masks);

// inputs [B x t x m] -> logits [B x classes]. Without masks this is the dense model.
Tensor model_forward(const Tensor& inputs, const TransformerWeights& model, const MaskSet* masks = nullptr);

struct PairCount {
  std::size_t layer = 0;
  PairKind kind = PairKind::kQueryKey;
  std::size_t head = 0;
  std::size_t retained = 0;

  friend bool operator==(const PairCount&, const PairCount&) = default;
};

struct CostReport {
  std::size_t params = 0;           // every stored parameter
  std::size_t maskable_params = 0;  // parameters living in masked pairs
  std::size_t attention_macs = 0;   // per token
  std::size_t mlp_macs = 0;         // per token
  std::size_t head_macs = 0;        // per sequence (pooled classifier)
  std::vector<PairCount> pairs;

  std::size_t macs_per_token() const { return attention_macs + mlp_macs; }
  friend bool operator==(const CostReport&, const CostReport&) = default;
};

CostReport count_cost(const TransformerWeights& model, std::size_t tokens);

enum class EmptyPairPolicy { kKeepLargest, kError };

struct CompactModel {
  TransformerWeights weights;
  // Indices into the source model's columns, one list per layout segment.
  std::vector<std::vector<std::size_t>> retained;
  std::vector<std::string> warnings;
};

// Drops columns whose mask magnitude is <= threshold from both members of
// every pair and folds the surviving mask values into the weights.
CompactModel compact(const TransformerWeights& model, const MaskSet& masks, double threshold,
                     EmptyPairPolicy policy = EmptyPairPolicy::kKeepLargest);

}  // namespace spp
