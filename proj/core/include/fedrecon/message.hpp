#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fedrecon/model.hpp"
#include "fedrecon/param_set.hpp"

namespace fedrecon::fl {

enum class MessageKind : std::uint8_t {
  kDeploy = 1,
  kUpload = 2,
  kLatentRequest = 3,
  kLatentReply = 4,
  kEncoderUpdate = 5,
};

const char* to_string(MessageKind kind);

// LatentRequest carries no payload; LatentReply carries z_t; EncoderUpdate
// carries dL/dz_t in the same layout.
using Payload = std::variant<std::monostate, ParamSet, model::LatentBatch>;

struct Message {
  MessageKind kind = MessageKind::kDeploy;
  std::uint32_t round = 0;
  std::string sender;
  std::string receiver;
  Payload payload;
};

// Wire layout: kind u8, round u32, sender and receiver as u32-length-prefixed
// UTF-8, payload tag u8 (0 none, 1 ParamSet, 2 LatentBatch), payload bytes.
std::vector<std::uint8_t> encode_message(const Message& m);
Message decode_message(std::span<const std::uint8_t> bytes);

// LatentBatch layout: dims u32 x 4, f64 little-endian data, origin_site string.
void write_latent(io::Writer& w, const model::LatentBatch& latent);
model::LatentBatch read_latent(io::Reader& r);

}  // namespace fedrecon::fl
