#pragma once

// Forward-only neural networks over a single flat parameter vector.
//
// Parameter layout (the contract shared by checkpoints, noise application
// and every view in this header). Every dense layer stores its weight as an
// [out x in] row-major matrix followed by its [out] bias, y = W x + b.
//
// Feedforward: one dense layer per consecutive pair of
//   (obs_dim, hidden_layers..., act_dim), in order.
//
// Decision transformer (E = embed_dim, F = 4E, T = max_episode_len):
//   embed_rtg    [E x 1]   + [E]
//   embed_obs    [E x obs] + [E]
//   embed_act    [E x act] + [E]
//   position     [T x E]   (row t is the encoding of timestep t)
//   embed_norm   scale [E], shift [E]
//   n_layers x block:
//     attn_norm  scale [E], shift [E]
//     query, key, value, proj   [E x E] + [E] each
//     ffn_norm   scale [E], shift [E]
//     ffn_in     [F x E] + [F]
//     ffn_out    [E x F] + [E]
//   final_norm   scale [E], shift [E]
//   action_head  [act x E] + [act]
//
// Heads split the E query/key/value features into n_heads contiguous slices.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace evodt::nn {

enum class PolicyKind : std::uint8_t { kFeedforward = 0, kDecisionTransformer = 1 };

struct PolicySpec {
  PolicyKind kind = PolicyKind::kFeedforward;
  std::size_t obs_dim = 1;
  std::size_t act_dim = 1;
  std::vector<std::size_t> hidden_layers;  // feedforward only

  // decision transformer only
  std::size_t embed_dim = 16;
  std::size_t n_layers = 1;
  std::size_t n_heads = 1;
  std::size_t context_len = 4;
  std::size_t max_episode_len = 64;

  /// Throws SpecError on zero dims or embed_dim not divisible by n_heads.
  void validate() const;

  std::size_t head_dim() const { return embed_dim / n_heads; }
  std::size_t ffn_dim() const { return 4 * embed_dim; }

  bool operator==(const PolicySpec&) const = default;
};

PolicySpec feedforward_spec(std::size_t obs_dim, std::vector<std::size_t> hidden, std::size_t act_dim);
PolicySpec decision_transformer_spec(std::size_t obs_dim, std::size_t act_dim, std::size_t embed_dim,
                                     std::size_t n_layers, std::size_t n_heads, std::size_t context_len,
                                     std::size_t max_episode_len);

struct FlatParams {
  std::vector<double> values;

  FlatParams() = default;
  explicit FlatParams(std::vector<double> v) : values(std::move(v)) {}
  explicit FlatParams(std::size_t n) : values(n, 0.0) {}

  std::size_t size() const { return values.size(); }
  std::span<const double> view() const { return values; }
  std::span<double> view() { return values; }

  bool operator==(const FlatParams&) const = default;
};

enum class SlotRole { kWeight, kOutputWeight, kResidualWeight, kBias, kNormScale, kNormShift, kPositionTable };

// One named tensor inside the flat vector.
struct TensorSlot {
  std::string name;
  std::size_t offset;
  std::size_t rows;
  std::size_t cols;
  SlotRole role;

  std::size_t size() const { return rows * cols; }
};

std::vector<TensorSlot> parameter_layout(const PolicySpec& spec);

/// Number of scalars the spec's layout requires. Throws SpecError on an invalid spec.
std::size_t param_count(const PolicySpec& spec);

// Row-major [rows x cols]; one row per sequence element.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

struct DenseView {
  std::span<const double> weight;  // [out x in]
  std::span<const double> bias;    // [out]
  std::size_t in = 0;
  std::size_t out = 0;

  void apply(std::span<const double> x, std::span<double> y) const;
};

struct LayerNormView {
  std::span<const double> scale;
  std::span<const double> shift;

  void apply(std::span<const double> x, std::span<double> y) const;
};

struct AttentionBlock {
  LayerNormView attn_norm;
  DenseView query;
  DenseView key;
  DenseView value;
  DenseView proj;
  LayerNormView ffn_norm;
  DenseView ffn_in;
  DenseView ffn_out;
  std::size_t n_heads = 1;
};

struct MlpView {
  std::vector<DenseView> layers;
};

struct DecisionTransformerView {
  DenseView embed_rtg;
  DenseView embed_obs;
  DenseView embed_act;
  std::span<const double> position_table;  // [max_positions x E]
  std::size_t max_positions = 0;
  LayerNormView embed_norm;
  std::vector<AttentionBlock> blocks;
  LayerNormView final_norm;
  DenseView action_head;
  std::size_t context_len = 0;
};

using PolicyView = std::variant<MlpView, DecisionTransformerView>;

/// Views alias `params`; they stay valid only while the buffer does.
/// Throws LayoutError if params.size() != param_count(spec).
PolicyView unflatten(std::span<const double> params, const PolicySpec& spec);
MlpView unflatten_mlp(std::span<const double> params, const PolicySpec& spec);
DecisionTransformerView unflatten_dt(std::span<const double> params, const PolicySpec& spec);

/// Concatenates the tensors a view refers to, in layout order.
FlatParams flatten(const PolicyView& view);

/// tanh hidden layers, linear output.
std::vector<double> mlp_forward(std::span<const double> params, const PolicySpec& spec,
                                std::span<const double> obs);
std::vector<double> mlp_forward(const MlpView& mlp, std::span<const double> obs);

/// Masked multi-head attention over an already-normalized sequence. Row i of
/// the result is sum_j softmax_j(q_i . k_j / sqrt(head_dim)) v_j over j <= i,
/// before the output projection.
Matrix causal_self_attention(const AttentionBlock& block, const Matrix& x);

/// Softmax rows of the masked logits, one matrix per head; exposed for tests.
std::vector<Matrix> attention_weights(const AttentionBlock& block, const Matrix& x);

/// Pre-norm residual block applied in place.
void apply_block(const AttentionBlock& block, Matrix& h);

/// Runs the block stack on embedded tokens. At most 3 * context_len rows.
Matrix transformer_forward(std::span<const double> params, const PolicySpec& spec, const Matrix& tokens);
Matrix transformer_forward(const DecisionTransformerView& dt, const Matrix& tokens);

/// Same as transformer_forward(...).row(position) but skips last-layer work for other rows.
std::vector<double> transformer_forward_at(const DecisionTransformerView& dt, const Matrix& tokens,
                                           std::size_t position);

/// Scaled-normal weights, zero biases, unit norm scales, small position table.
FlatParams init_params(const PolicySpec& spec, std::uint64_t seed);

}  // namespace evodt::nn
