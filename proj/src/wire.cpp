#include "evodt/wire.hpp"

#include <string>

#include "evodt/errors.hpp"

namespace evodt::wire {

namespace {

using Kind = DecodeError::Kind;

std::vector<double> read_fixed(ByteReader& r, std::size_t n) {
  if (n > r.remaining() / 8) throw DecodeError(Kind::kTruncated, "vector runs past the end of input");
  std::vector<double> v(n);
  for (auto& x : v) x = r.f64();
  return v;
}

void write_payload(ByteWriter& w, const Hello& m) {
  w.u32(m.worker_id);
  w.u32(m.protocol_version);
}

void write_payload(ByteWriter& w, const Welcome& m) { w.str(m.config_text); }

void write_payload(ByteWriter& w, const TaskMessage& m) {
  w.u64(m.iteration);
  w.u64(m.rng_seed);
  w.f64(m.sigma);
  w.u32(m.episodes_per_eval);
  w.u32(m.population);
  w.u32(m.first_index);
  w.u32(m.count);
  w.u64(m.theta_version);
  w.u32(static_cast<std::uint32_t>(m.desired_returns.size()));
  for (double d : m.desired_returns) w.f64(d);
}

void write_payload(ByteWriter& w, const ResultMessage& m) {
  w.u32(m.worker_id);
  w.u64(m.iteration);
  w.u32(m.first_index);
  w.u32(static_cast<std::uint32_t>(m.entries.size()));
  for (const auto& e : m.entries) {
    w.u64(e.offset);
    w.i8(e.sign);
    w.f64(e.fitness);
    w.f64(e.mean_return);
    w.u64(e.episode_steps);
    w.u32(static_cast<std::uint32_t>(e.vbn_batch.size()));
    for (double x : e.vbn_batch) w.f64(x);
  }
}

void write_payload(ByteWriter& w, const UpdateMessage& m) {
  w.u64(m.iteration);
  w.u64(m.theta_version);
  w.u32(static_cast<std::uint32_t>(m.entries.size()));
  for (const auto& e : m.entries) {
    w.u64(e.offset);
    w.i8(e.sign);
    w.f64(e.weight);
  }
  write_vbn(w, m.vbn_delta);
}

void write_payload(ByteWriter& w, const ResyncRequest& m) { w.u32(m.worker_id); }

void write_payload(ByteWriter& w, const ResyncMessage& m) { write_state(w, m.state); }

void write_payload(ByteWriter&, const Shutdown&) {}

Message read_payload(MessageType type, ByteReader& r) {
  switch (type) {
    case MessageType::kHello: {
      Hello m;
      m.worker_id = r.u32();
      m.protocol_version = r.u32();
      return m;
    }
    case MessageType::kWelcome:
      return Welcome{r.str()};
    case MessageType::kTask: {
      TaskMessage m;
      m.iteration = r.u64();
      m.rng_seed = r.u64();
      m.sigma = r.f64();
      m.episodes_per_eval = r.u32();
      m.population = r.u32();
      m.first_index = r.u32();
      m.count = r.u32();
      m.theta_version = r.u64();
      m.desired_returns = read_fixed(r, r.u32());
      return m;
    }
    case MessageType::kResult: {
      ResultMessage m;
      m.worker_id = r.u32();
      m.iteration = r.u64();
      m.first_index = r.u32();
      const std::uint32_t n = r.u32();
      // Each entry needs at least 37 bytes.
      if (n > r.remaining() / 37) throw DecodeError(Kind::kTruncated, "result entries run past the end of input");
      m.entries.resize(n);
      for (auto& e : m.entries) {
        e.offset = r.u64();
        e.sign = r.i8();
        e.fitness = r.f64();
        e.mean_return = r.f64();
        e.episode_steps = r.u64();
        e.vbn_batch = read_fixed(r, r.u32());
      }
      return m;
    }
    case MessageType::kUpdate: {
      UpdateMessage m;
      m.iteration = r.u64();
      m.theta_version = r.u64();
      const std::uint32_t n = r.u32();
      if (n > r.remaining() / 17) throw DecodeError(Kind::kTruncated, "update entries run past the end of input");
      m.entries.resize(n);
      for (auto& e : m.entries) {
        e.offset = r.u64();
        e.sign = r.i8();
        e.weight = r.f64();
      }
      m.vbn_delta = read_vbn(r);
      return m;
    }
    case MessageType::kResyncRequest:
      return ResyncRequest{r.u32()};
    case MessageType::kResync:
      return ResyncMessage{read_state(r)};
    case MessageType::kShutdown:
      return Shutdown{};
  }
  throw DecodeError(Kind::kBadTag, "unknown message tag");
}

bool known_tag(std::uint8_t tag) { return tag >= 1 && tag <= 8; }

}  // namespace

MessageType type_of(const Message& m) {
  return std::visit(
      [](const auto& msg) -> MessageType {
        using T = std::decay_t<decltype(msg)>;
        if constexpr (std::is_same_v<T, Hello>) return MessageType::kHello;
        if constexpr (std::is_same_v<T, Welcome>) return MessageType::kWelcome;
        if constexpr (std::is_same_v<T, TaskMessage>) return MessageType::kTask;
        if constexpr (std::is_same_v<T, ResultMessage>) return MessageType::kResult;
        if constexpr (std::is_same_v<T, UpdateMessage>) return MessageType::kUpdate;
        if constexpr (std::is_same_v<T, ResyncRequest>) return MessageType::kResyncRequest;
        if constexpr (std::is_same_v<T, ResyncMessage>) return MessageType::kResync;
        return MessageType::kShutdown;
      },
      m);
}

Bytes encode(const Message& m) {
  ByteWriter w;
  w.u32(0);  // patched below
  w.u8(static_cast<std::uint8_t>(type_of(m)));
  std::visit([&](const auto& msg) { write_payload(w, msg); }, m);
  Bytes out = w.take();
  const std::uint64_t len = out.size() - 4;
  if (len > kMaxFrameLength) throw DecodeError(Kind::kLengthOverflow, "message too large to frame");
  for (int i = 0; i < 4; ++i) out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(len >> (8 * i));
  return out;
}

std::optional<std::uint32_t> peek_length(std::span<const std::uint8_t> data) {
  if (data.size() < 4) return std::nullopt;
  ByteReader r(data.first(4));
  const std::uint32_t len = r.u32();
  if (len > kMaxFrameLength) throw DecodeError(Kind::kLengthOverflow, "frame length exceeds the protocol limit");
  return len;
}

Message decode(std::span<const std::uint8_t> frame) {
  const auto len = peek_length(frame);
  if (!len) throw DecodeError(Kind::kTruncated, "frame shorter than its length prefix");
  if (*len == 0) throw DecodeError(Kind::kTruncated, "frame has no type tag");
  if (frame.size() < 4 + static_cast<std::size_t>(*len)) throw DecodeError(Kind::kTruncated, "frame truncated");
  if (frame.size() > 4 + static_cast<std::size_t>(*len)) {
    throw DecodeError(Kind::kLengthOverflow, "bytes beyond the declared frame length");
  }
  const std::uint8_t tag = frame[4];
  if (!known_tag(tag)) throw DecodeError(Kind::kBadTag, "unknown message tag " + std::to_string(tag));
  ByteReader r(frame.subspan(5));
  Message m = read_payload(static_cast<MessageType>(tag), r);
  if (!r.done()) throw DecodeError(Kind::kLengthOverflow, "payload shorter than the declared frame length");
  return m;
}

void write_spec(ByteWriter& w, const nn::PolicySpec& spec) {
  w.u8(static_cast<std::uint8_t>(spec.kind));
  w.u32(static_cast<std::uint32_t>(spec.obs_dim));
  w.u32(static_cast<std::uint32_t>(spec.act_dim));
  w.u32(static_cast<std::uint32_t>(spec.hidden_layers.size()));
  for (auto h : spec.hidden_layers) w.u32(static_cast<std::uint32_t>(h));
  w.u32(static_cast<std::uint32_t>(spec.embed_dim));
  w.u32(static_cast<std::uint32_t>(spec.n_layers));
  w.u32(static_cast<std::uint32_t>(spec.n_heads));
  w.u32(static_cast<std::uint32_t>(spec.context_len));
  w.u32(static_cast<std::uint32_t>(spec.max_episode_len));
}

nn::PolicySpec read_spec(ByteReader& r) {
  nn::PolicySpec s;
  const std::uint8_t kind = r.u8();
  if (kind > 1) throw DecodeError(Kind::kBadValue, "unknown policy kind");
  s.kind = static_cast<nn::PolicyKind>(kind);
  s.obs_dim = r.u32();
  s.act_dim = r.u32();
  const std::uint32_t n = r.u32();
  if (n > r.remaining() / 4) throw DecodeError(Kind::kTruncated, "hidden layer list truncated");
  s.hidden_layers.resize(n);
  for (auto& h : s.hidden_layers) h = r.u32();
  s.embed_dim = r.u32();
  s.n_layers = r.u32();
  s.n_heads = r.u32();
  s.context_len = r.u32();
  s.max_episode_len = r.u32();
  return s;
}

void write_vbn(ByteWriter& w, const es::VbnStats& s) {
  w.u64(s.count);
  w.u32(static_cast<std::uint32_t>(s.dim()));
  for (double x : s.mean) w.f64(x);
  for (double x : s.m2) w.f64(x);
}

es::VbnStats read_vbn(ByteReader& r) {
  es::VbnStats s;
  s.count = r.u64();
  const std::uint32_t dim = r.u32();
  s.mean = read_fixed(r, dim);
  s.m2 = read_fixed(r, dim);
  return s;
}

void write_state(ByteWriter& w, const es::EsState& state) {
  w.u64(state.iteration);
  w.f64(state.sigma);
  w.u64(state.rng_seed);
  w.f64_vec(state.theta.values);
  w.u8(static_cast<std::uint8_t>(state.optimizer.kind));
  w.u64(state.optimizer.steps);
  w.f64_vec(state.optimizer.m);
  w.f64_vec(state.optimizer.v);
  write_vbn(w, state.vbn);
}

es::EsState read_state(ByteReader& r) {
  es::EsState s;
  s.iteration = r.u64();
  s.sigma = r.f64();
  s.rng_seed = r.u64();
  s.theta.values = r.f64_vec();
  const std::uint8_t kind = r.u8();
  if (kind > 1) throw DecodeError(Kind::kBadValue, "unknown optimizer kind");
  s.optimizer.kind = static_cast<es::OptimizerKind>(kind);
  s.optimizer.steps = r.u64();
  s.optimizer.m = r.f64_vec();
  s.optimizer.v = r.f64_vec();
  s.vbn = read_vbn(r);
  return s;
}

}  // namespace evodt::wire
