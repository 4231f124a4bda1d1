#pragma once

// Master/worker protocol. Every frame is
//   [u32 LE length of everything after it][u8 type tag][payload]
// with little-endian fixed-width integers and binary64 reals.
//
// Generation traffic (Task, Result, Update) is O(population) and
// independent of the parameter count; only Resync carries a full state.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "evodt/bytes.hpp"
#include "evodt/es.hpp"
#include "evodt/nn.hpp"

namespace evodt::wire {

inline constexpr std::uint32_t kProtocolVersion = 1;
inline constexpr std::size_t kHeaderSize = 5;
inline constexpr std::uint32_t kMaxFrameLength = 1u << 30;

enum class MessageType : std::uint8_t {
  kHello = 1,
  kWelcome = 2,
  kTask = 3,
  kResult = 4,
  kUpdate = 5,
  kResyncRequest = 6,
  kResync = 7,
  kShutdown = 8,
};

struct Hello {
  std::uint32_t worker_id = 0;
  std::uint32_t protocol_version = kProtocolVersion;

  bool operator==(const Hello&) const = default;
};

// Master -> worker after Hello: the resolved run configuration.
struct Welcome {
  std::string config_text;

  bool operator==(const Welcome&) const = default;
};

struct TaskMessage {
  std::uint64_t iteration = 0;
  std::uint64_t rng_seed = 0;
  double sigma = 0.0;
  std::uint32_t episodes_per_eval = 1;
  std::uint32_t population = 0;
  std::uint32_t first_index = 0;  // slice of the generation's offset list
  std::uint32_t count = 0;
  std::uint64_t theta_version = 0;
  std::vector<double> desired_returns;  // return-conditioned fitness only

  bool operator==(const TaskMessage&) const = default;
};

struct ResultEntry {
  std::uint64_t offset = 0;
  std::int8_t sign = 1;
  double fitness = 0.0;
  double mean_return = 0.0;
  std::uint64_t episode_steps = 0;
  std::vector<double> vbn_batch;  // row-major observations; empty unless selected

  bool operator==(const ResultEntry&) const = default;
};

struct ResultMessage {
  std::uint32_t worker_id = 0;
  std::uint64_t iteration = 0;
  std::uint32_t first_index = 0;
  std::vector<ResultEntry> entries;

  bool operator==(const ResultMessage&) const = default;
};

struct UpdateMessage {
  std::uint64_t iteration = 0;  // the iteration the update completes
  std::vector<es::WeightedPerturbation> entries;
  std::uint64_t theta_version = 0;  // digest after applying
  es::VbnStats vbn_delta;

  bool operator==(const UpdateMessage&) const = default;
};

struct ResyncRequest {
  std::uint32_t worker_id = 0;

  bool operator==(const ResyncRequest&) const = default;
};

struct ResyncMessage {
  es::EsState state;

  bool operator==(const ResyncMessage&) const = default;
};

struct Shutdown {
  bool operator==(const Shutdown&) const = default;
};

using Message =
    std::variant<Hello, Welcome, TaskMessage, ResultMessage, UpdateMessage, ResyncRequest, ResyncMessage, Shutdown>;

MessageType type_of(const Message& m);

Bytes encode(const Message& m);

/// Decodes exactly one frame. Throws DecodeError with kind kTruncated,
/// kBadTag or kLengthOverflow; no partial message is ever returned.
Message decode(std::span<const std::uint8_t> frame);

/// Reads the length prefix; nullopt until 4 bytes are available.
/// Throws DecodeError(kLengthOverflow) above kMaxFrameLength.
std::optional<std::uint32_t> peek_length(std::span<const std::uint8_t> data);

// Shared with checkpoints.
void write_spec(ByteWriter& w, const nn::PolicySpec& spec);
nn::PolicySpec read_spec(ByteReader& r);
void write_state(ByteWriter& w, const es::EsState& state);
es::EsState read_state(ByteReader& r);
void write_vbn(ByteWriter& w, const es::VbnStats& s);
es::VbnStats read_vbn(ByteReader& r);

}  // namespace evodt::wire
