#include "evodt/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "evodt/errors.hpp"

namespace evodt::nn {

namespace {

constexpr double kNormEps = 1e-5;

class LayoutBuilder {
 public:
  void add(std::string name, std::size_t rows, std::size_t cols, SlotRole role) {
    slots_.push_back({std::move(name), offset_, rows, cols, role});
    offset_ += rows * cols;
  }

  void dense(const std::string& name, std::size_t in, std::size_t out, SlotRole weight_role = SlotRole::kWeight) {
    add(name + ".weight", out, in, weight_role);
    add(name + ".bias", 1, out, SlotRole::kBias);
  }

  void norm(const std::string& name, std::size_t width) {
    add(name + ".scale", 1, width, SlotRole::kNormScale);
    add(name + ".shift", 1, width, SlotRole::kNormShift);
  }

  std::vector<TensorSlot> take() { return std::move(slots_); }

 private:
  std::vector<TensorSlot> slots_;
  std::size_t offset_ = 0;
};

// Sequential reader over a flat buffer, mirroring the documented layout.
class Cursor {
 public:
  explicit Cursor(std::span<const double> data) : data_(data) {}

  std::span<const double> take(std::size_t n) {
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  DenseView dense(std::size_t in, std::size_t out) {
    DenseView d;
    d.weight = take(in * out);
    d.bias = take(out);
    d.in = in;
    d.out = out;
    return d;
  }

  LayerNormView norm(std::size_t width) {
    LayerNormView n;
    n.scale = take(width);
    n.shift = take(width);
    return n;
  }

  std::size_t position() const { return pos_; }

 private:
  std::span<const double> data_;
  std::size_t pos_ = 0;
};

void check_length(std::span<const double> params, const PolicySpec& spec) {
  const std::size_t expected = param_count(spec);
  if (params.size() != expected) {
    throw LayoutError("parameter vector has " + std::to_string(params.size()) + " values, layout needs " +
                      std::to_string(expected));
  }
}

void append(std::vector<double>& out, std::span<const double> s) { out.insert(out.end(), s.begin(), s.end()); }

void append(std::vector<double>& out, const DenseView& d) {
  append(out, d.weight);
  append(out, d.bias);
}

void append(std::vector<double>& out, const LayerNormView& n) {
  append(out, n.scale);
  append(out, n.shift);
}

}  // namespace

void PolicySpec::validate() const {
  if (obs_dim == 0 || act_dim == 0) throw SpecError("obs_dim and act_dim must be positive");
  if (kind == PolicyKind::kFeedforward) {
    for (auto h : hidden_layers) {
      if (h == 0) throw SpecError("hidden layer widths must be positive");
    }
    return;
  }
  if (embed_dim == 0 || n_layers == 0 || n_heads == 0 || context_len == 0 || max_episode_len == 0) {
    throw SpecError("decision transformer dims must be positive");
  }
  if (embed_dim % n_heads != 0) throw SpecError("embed_dim must be divisible by n_heads");
}

PolicySpec feedforward_spec(std::size_t obs_dim, std::vector<std::size_t> hidden, std::size_t act_dim) {
  PolicySpec s;
  s.kind = PolicyKind::kFeedforward;
  s.obs_dim = obs_dim;
  s.act_dim = act_dim;
  s.hidden_layers = std::move(hidden);
  return s;
}

PolicySpec decision_transformer_spec(std::size_t obs_dim, std::size_t act_dim, std::size_t embed_dim,
                                     std::size_t n_layers, std::size_t n_heads, std::size_t context_len,
                                     std::size_t max_episode_len) {
  PolicySpec s;
  s.kind = PolicyKind::kDecisionTransformer;
  s.obs_dim = obs_dim;
  s.act_dim = act_dim;
  s.embed_dim = embed_dim;
  s.n_layers = n_layers;
  s.n_heads = n_heads;
  s.context_len = context_len;
  s.max_episode_len = max_episode_len;
  return s;
}

std::vector<TensorSlot> parameter_layout(const PolicySpec& spec) {
  spec.validate();
  LayoutBuilder b;
  if (spec.kind == PolicyKind::kFeedforward) {
    std::vector<std::size_t> widths{spec.obs_dim};
    widths.insert(widths.end(), spec.hidden_layers.begin(), spec.hidden_layers.end());
    widths.push_back(spec.act_dim);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const bool last = l + 2 == widths.size();
      b.dense("layer" + std::to_string(l), widths[l], widths[l + 1], last ? SlotRole::kOutputWeight : SlotRole::kWeight);
    }
    return b.take();
  }

  const std::size_t e = spec.embed_dim;
  b.dense("embed_rtg", 1, e);
  b.dense("embed_obs", spec.obs_dim, e);
  b.dense("embed_act", spec.act_dim, e);
  b.add("position", spec.max_episode_len, e, SlotRole::kPositionTable);
  b.norm("embed_norm", e);
  for (std::size_t l = 0; l < spec.n_layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    b.norm(p + "attn_norm", e);
    b.dense(p + "query", e, e);
    b.dense(p + "key", e, e);
    b.dense(p + "value", e, e);
    b.dense(p + "proj", e, e, SlotRole::kResidualWeight);
    b.norm(p + "ffn_norm", e);
    b.dense(p + "ffn_in", e, spec.ffn_dim());
    b.dense(p + "ffn_out", spec.ffn_dim(), e, SlotRole::kResidualWeight);
  }
  b.norm("final_norm", e);
  b.dense("action_head", e, spec.act_dim, SlotRole::kOutputWeight);
  return b.take();
}

std::size_t param_count(const PolicySpec& spec) {
  const auto slots = parameter_layout(spec);
  return slots.empty() ? 0 : slots.back().offset + slots.back().size();
}

void DenseView::apply(std::span<const double> x, std::span<double> y) const {
  if (x.size() != in || y.size() != out) throw ContractError("dense layer shape mismatch");
  const double* xs = x.data();
  const std::size_t in4 = in - in % 4;
  for (std::size_t o = 0; o < out; ++o) {
    const double* w = weight.data() + o * in;
    // Four interleaved partial sums in a fixed order.
    double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
    for (std::size_t i = 0; i < in4; i += 4) {
      a0 += w[i] * xs[i];
      a1 += w[i + 1] * xs[i + 1];
      a2 += w[i + 2] * xs[i + 2];
      a3 += w[i + 3] * xs[i + 3];
    }
    for (std::size_t i = in4; i < in; ++i) a0 += w[i] * xs[i];
    y[o] = bias[o] + ((a0 + a1) + (a2 + a3));
  }
}

void LayerNormView::apply(std::span<const double> x, std::span<double> y) const {
  const std::size_t n = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double inv = 1.0 / std::sqrt(var + kNormEps);
  for (std::size_t i = 0; i < n; ++i) y[i] = (x[i] - mean) * inv * scale[i] + shift[i];
}

MlpView unflatten_mlp(std::span<const double> params, const PolicySpec& spec) {
  spec.validate();
  if (spec.kind != PolicyKind::kFeedforward) throw SpecError("spec is not feedforward");
  check_length(params, spec);
  Cursor c(params);
  MlpView mlp;
  std::size_t in = spec.obs_dim;
  for (auto h : spec.hidden_layers) {
    mlp.layers.push_back(c.dense(in, h));
    in = h;
  }
  mlp.layers.push_back(c.dense(in, spec.act_dim));
  return mlp;
}

DecisionTransformerView unflatten_dt(std::span<const double> params, const PolicySpec& spec) {
  spec.validate();
  if (spec.kind != PolicyKind::kDecisionTransformer) throw SpecError("spec is not a decision transformer");
  check_length(params, spec);
  const std::size_t e = spec.embed_dim;
  Cursor c(params);
  DecisionTransformerView dt;
  dt.embed_rtg = c.dense(1, e);
  dt.embed_obs = c.dense(spec.obs_dim, e);
  dt.embed_act = c.dense(spec.act_dim, e);
  dt.position_table = c.take(spec.max_episode_len * e);
  dt.max_positions = spec.max_episode_len;
  dt.embed_norm = c.norm(e);
  for (std::size_t l = 0; l < spec.n_layers; ++l) {
    AttentionBlock blk;
    blk.attn_norm = c.norm(e);
    blk.query = c.dense(e, e);
    blk.key = c.dense(e, e);
    blk.value = c.dense(e, e);
    blk.proj = c.dense(e, e);
    blk.ffn_norm = c.norm(e);
    blk.ffn_in = c.dense(e, spec.ffn_dim());
    blk.ffn_out = c.dense(spec.ffn_dim(), e);
    blk.n_heads = spec.n_heads;
    dt.blocks.push_back(blk);
  }
  dt.final_norm = c.norm(e);
  dt.action_head = c.dense(e, spec.act_dim);
  dt.context_len = spec.context_len;
  return dt;
}

PolicyView unflatten(std::span<const double> params, const PolicySpec& spec) {
  if (spec.kind == PolicyKind::kFeedforward) return unflatten_mlp(params, spec);
  return unflatten_dt(params, spec);
}

FlatParams flatten(const PolicyView& view) {
  std::vector<double> out;
  if (const auto* mlp = std::get_if<MlpView>(&view)) {
    for (const auto& layer : mlp->layers) append(out, layer);
    return FlatParams(std::move(out));
  }
  const auto& dt = std::get<DecisionTransformerView>(view);
  append(out, dt.embed_rtg);
  append(out, dt.embed_obs);
  append(out, dt.embed_act);
  append(out, dt.position_table);
  append(out, dt.embed_norm);
  for (const auto& blk : dt.blocks) {
    append(out, blk.attn_norm);
    append(out, blk.query);
    append(out, blk.key);
    append(out, blk.value);
    append(out, blk.proj);
    append(out, blk.ffn_norm);
    append(out, blk.ffn_in);
    append(out, blk.ffn_out);
  }
  append(out, dt.final_norm);
  append(out, dt.action_head);
  return FlatParams(std::move(out));
}

std::vector<double> mlp_forward(const MlpView& mlp, std::span<const double> obs) {
  if (mlp.layers.empty() || obs.size() != mlp.layers.front().in) throw ContractError("observation size mismatch");
  std::vector<double> x(obs.begin(), obs.end());
  std::vector<double> y;
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    const auto& layer = mlp.layers[l];
    y.assign(layer.out, 0.0);
    layer.apply(x, y);
    if (l + 1 < mlp.layers.size()) {
      for (double& v : y) v = std::tanh(v);
    }
    x.swap(y);
  }
  return x;
}

std::vector<double> mlp_forward(std::span<const double> params, const PolicySpec& spec,
                                std::span<const double> obs) {
  if (obs.size() != spec.obs_dim) throw ContractError("observation size mismatch");
  return mlp_forward(unflatten_mlp(params, spec), obs);
}

namespace {

Matrix project(const DenseView& d, const Matrix& x, std::size_t rows) {
  Matrix y(rows, d.out);
  for (std::size_t i = 0; i < rows; ++i) d.apply(x.row(i), y.row(i));
  return y;
}

Matrix normalize_rows(const LayerNormView& n, const Matrix& x, std::size_t rows) {
  Matrix y(rows, x.cols);
  for (std::size_t i = 0; i < rows; ++i) n.apply(x.row(i), y.row(i));
  return y;
}

// Attention output for query row i over keys 0..i, written to out (width E).
void attend_row(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t n_heads, std::size_t i,
                std::span<double> out, std::vector<double>& scratch, std::vector<double>* weights_out = nullptr) {
  const std::size_t e = q.cols;
  const std::size_t hd = e / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  scratch.resize(i + 1);
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t lo = h * hd;
    double max_logit = -INFINITY;
    for (std::size_t j = 0; j <= i; ++j) {
      double dot = 0.0;
      for (std::size_t c = lo; c < lo + hd; ++c) dot += q.at(i, c) * k.at(j, c);
      scratch[j] = dot * scale;
      max_logit = std::max(max_logit, scratch[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j <= i; ++j) {
      scratch[j] = std::exp(scratch[j] - max_logit);
      total += scratch[j];
    }
    for (std::size_t j = 0; j <= i; ++j) {
      const double p = scratch[j] / total;
      if (weights_out) weights_out[h].push_back(p);
      for (std::size_t c = lo; c < lo + hd; ++c) out[c] += p * v.at(j, c);
    }
  }
}

void check_block_input(const AttentionBlock& block, const Matrix& x) {
  if (x.rows == 0) throw ContractError("attention over an empty sequence");
  if (x.cols != block.query.in) throw ContractError("sequence width does not match embed_dim");
}

void feedforward_row(const AttentionBlock& block, std::span<double> h, std::vector<double>& normed,
                     std::vector<double>& hidden, std::vector<double>& out) {
  normed.resize(h.size());
  hidden.resize(block.ffn_in.out);
  out.resize(h.size());
  block.ffn_norm.apply(h, normed);
  block.ffn_in.apply(normed, hidden);
  for (double& v : hidden) v = std::tanh(v);
  block.ffn_out.apply(hidden, out);
  for (std::size_t c = 0; c < h.size(); ++c) h[c] += out[c];
}

}  // namespace

Matrix causal_self_attention(const AttentionBlock& block, const Matrix& x) {
  check_block_input(block, x);
  const Matrix q = project(block.query, x, x.rows);
  const Matrix k = project(block.key, x, x.rows);
  const Matrix v = project(block.value, x, x.rows);
  Matrix out(x.rows, x.cols);
  std::vector<double> scratch;
  for (std::size_t i = 0; i < x.rows; ++i) attend_row(q, k, v, block.n_heads, i, out.row(i), scratch);
  return out;
}

std::vector<Matrix> attention_weights(const AttentionBlock& block, const Matrix& x) {
  check_block_input(block, x);
  const Matrix q = project(block.query, x, x.rows);
  const Matrix k = project(block.key, x, x.rows);
  const Matrix v = project(block.value, x, x.rows);
  std::vector<Matrix> result(block.n_heads, Matrix(x.rows, x.rows));
  std::vector<double> scratch;
  std::vector<double> sink(x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    std::vector<std::vector<double>> rows(block.n_heads);
    attend_row(q, k, v, block.n_heads, i, sink, scratch, rows.data());
    for (std::size_t h = 0; h < block.n_heads; ++h) {
      for (std::size_t j = 0; j <= i; ++j) result[h].at(i, j) = rows[h][j];
    }
  }
  return result;
}

void apply_block(const AttentionBlock& block, Matrix& h) {
  const Matrix normed = normalize_rows(block.attn_norm, h, h.rows);
  const Matrix mixed = causal_self_attention(block, normed);
  std::vector<double> projected(h.cols);
  for (std::size_t i = 0; i < h.rows; ++i) {
    block.proj.apply(mixed.row(i), projected);
    auto r = h.row(i);
    for (std::size_t c = 0; c < h.cols; ++c) r[c] += projected[c];
  }
  std::vector<double> n, hid, out;
  for (std::size_t i = 0; i < h.rows; ++i) feedforward_row(block, h.row(i), n, hid, out);
}

Matrix transformer_forward(const DecisionTransformerView& dt, const Matrix& tokens) {
  if (tokens.rows > 3 * dt.context_len) {
    throw ContractError("token sequence longer than 3 * context_len; crop the context first");
  }
  Matrix h = tokens;
  for (const auto& blk : dt.blocks) apply_block(blk, h);
  return h;
}

Matrix transformer_forward(std::span<const double> params, const PolicySpec& spec, const Matrix& tokens) {
  return transformer_forward(unflatten_dt(params, spec), tokens);
}

std::vector<double> transformer_forward_at(const DecisionTransformerView& dt, const Matrix& tokens,
                                           std::size_t position) {
  if (tokens.rows > 3 * dt.context_len) {
    throw ContractError("token sequence longer than 3 * context_len; crop the context first");
  }
  if (position >= tokens.rows) throw ContractError("position outside the token sequence");
  // Rows after `position` never influence it.
  const std::size_t rows = position + 1;
  Matrix h(rows, tokens.cols);
  std::copy(tokens.data.begin(), tokens.data.begin() + static_cast<std::ptrdiff_t>(rows * tokens.cols),
            h.data.begin());
  for (std::size_t l = 0; l + 1 < dt.blocks.size(); ++l) apply_block(dt.blocks[l], h);

  const auto& last = dt.blocks.back();
  const Matrix normed = normalize_rows(last.attn_norm, h, rows);
  const Matrix k = project(last.key, normed, rows);
  const Matrix v = project(last.value, normed, rows);
  Matrix q(rows, normed.cols);
  last.query.apply(normed.row(position), q.row(position));
  std::vector<double> mixed(h.cols), projected(h.cols), scratch;
  attend_row(q, k, v, last.n_heads, position, mixed, scratch);
  last.proj.apply(mixed, projected);
  std::vector<double> out(h.row(position).begin(), h.row(position).end());
  for (std::size_t c = 0; c < out.size(); ++c) out[c] += projected[c];
  std::vector<double> n, hid, tmp;
  feedforward_row(last, out, n, hid, tmp);
  return out;
}

FlatParams init_params(const PolicySpec& spec, std::uint64_t seed) {
  const auto slots = parameter_layout(spec);
  FlatParams p(param_count(spec));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double residual_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(spec.n_layers, 1)));
  for (const auto& s : slots) {
    auto dst = p.view().subspan(s.offset, s.size());
    const double fan_in_scale = 1.0 / std::sqrt(static_cast<double>(s.cols));
    switch (s.role) {
      case SlotRole::kWeight:
        for (double& v : dst) v = normal(rng) * fan_in_scale;
        break;
      case SlotRole::kResidualWeight:
        for (double& v : dst) v = normal(rng) * fan_in_scale * residual_scale;
        break;
      case SlotRole::kOutputWeight:
        for (double& v : dst) v = normal(rng) * fan_in_scale * 0.1;
        break;
      case SlotRole::kPositionTable:
        for (double& v : dst) v = normal(rng) * 0.02;
        break;
      case SlotRole::kNormScale:
        std::fill(dst.begin(), dst.end(), 1.0);
        break;
      case SlotRole::kBias:
      case SlotRole::kNormShift:
        std::fill(dst.begin(), dst.end(), 0.0);
        break;
    }
  }
  return p;
}

}  // namespace evodt::nn
