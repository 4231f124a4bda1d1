#include "evodt/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <iterator>

#include "evodt/errors.hpp"
#include "evodt/wire.hpp"

namespace evodt::checkpoint {

namespace {

constexpr std::array<std::uint8_t, 4> kMagic = {'E', 'V', 'D', 'T'};

void check_fit(const Checkpoint& c) {
  if (c.state.theta.size() != nn::param_count(c.spec)) {
    throw ContractError("checkpoint theta length does not match its policy spec");
  }
}

}  // namespace

Bytes serialize(const Checkpoint& ckpt) {
  check_fit(ckpt);
  ByteWriter w;
  w.raw(kMagic);
  w.u32(kVersion);
  wire::write_spec(w, ckpt.spec);
  wire::write_state(w, ckpt.state);
  w.u64(ckpt.config_digest);
  return w.take();
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto magic = r.raw(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic.begin())) {
    throw DecodeError(DecodeError::Kind::kBadMagic, "not a checkpoint");
  }
  if (r.u32() != kVersion) throw DecodeError(DecodeError::Kind::kBadValue, "unsupported checkpoint version");
  Checkpoint c;
  c.spec = wire::read_spec(r);
  c.state = wire::read_state(r);
  c.config_digest = r.u64();
  if (!r.done()) throw DecodeError(DecodeError::Kind::kLengthOverflow, "trailing bytes after checkpoint");
  try {
    c.spec.validate();
  } catch (const std::exception& e) {
    throw DecodeError(DecodeError::Kind::kBadValue, std::string("checkpoint spec: ") + e.what());
  }
  if (c.state.theta.size() != nn::param_count(c.spec)) {
    throw DecodeError(DecodeError::Kind::kBadValue, "checkpoint theta length does not match its policy spec");
  }
  return c;
}

void save(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const Bytes bytes = serialize(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ConfigError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read checkpoint " + path.string());
  const Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace evodt::checkpoint
