#include "fedrecon/message.hpp"

#include "fedrecon/error.hpp"

namespace fedrecon::fl {
namespace {

constexpr std::uint8_t kTagNone = 0;
constexpr std::uint8_t kTagParams = 1;
constexpr std::uint8_t kTagLatent = 2;

}  // namespace

const char* to_string(MessageKind kind) {
  switch (kind) {
    case MessageKind::kDeploy: return "Deploy";
    case MessageKind::kUpload: return "Upload";
    case MessageKind::kLatentRequest: return "LatentRequest";
    case MessageKind::kLatentReply: return "LatentReply";
    case MessageKind::kEncoderUpdate: return "EncoderUpdate";
  }
  return "?";
}

void write_latent(io::Writer& w, const model::LatentBatch& latent) {
  const auto& f = latent.features;
  if (f.rank() != 4) throw Error(ErrorKind::kShapeMismatch, "latent batch must be rank 4, got " + ad::shape_to_string(f.shape()));
  for (std::size_t d : f.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double v : f.data()) w.f64(v);
  w.string(latent.origin_site);
}

model::LatentBatch read_latent(io::Reader& r) {
  ad::Shape shape(4);
  for (auto& d : shape) {
    const std::size_t at = r.offset();
    d = r.u32();
    if (d == 0) throw FormatError(at, "zero latent dimension");
  }
  const std::size_t n = ad::shape_numel(shape);
  r.require(n * sizeof(double));
  std::vector<double> data(n);
  for (auto& v : data) v = r.f64();
  std::string origin = r.string();
  return {ad::Tensor(std::move(shape), std::move(data)), std::move(origin)};
}

std::vector<std::uint8_t> encode_message(const Message& m) {
  io::Writer w;
  w.u8(static_cast<std::uint8_t>(m.kind));
  w.u32(m.round);
  w.string(m.sender);
  w.string(m.receiver);
  if (const auto* params = std::get_if<ParamSet>(&m.payload)) {
    w.u8(kTagParams);
    write_params(w, *params);
  } else if (const auto* latent = std::get_if<model::LatentBatch>(&m.payload)) {
    w.u8(kTagLatent);
    write_latent(w, *latent);
  } else {
    w.u8(kTagNone);
  }
  return std::move(w.bytes());
}

Message decode_message(std::span<const std::uint8_t> bytes) {
  io::Reader r(bytes);
  Message m;
  const std::size_t kind_at = r.offset();
  const std::uint8_t kind = r.u8();
  if (kind < 1 || kind > 5) throw FormatError(kind_at, "unknown message kind " + std::to_string(kind));
  m.kind = static_cast<MessageKind>(kind);
  m.round = r.u32();
  m.sender = r.string();
  m.receiver = r.string();
  const std::size_t tag_at = r.offset();
  switch (r.u8()) {
    case kTagNone: break;
    case kTagParams: m.payload = read_params(r); break;
    case kTagLatent: m.payload = read_latent(r); break;
    default: throw FormatError(tag_at, "unknown payload tag");
  }
  r.require_end();
  return m;
}

}  // namespace fedrecon::fl
