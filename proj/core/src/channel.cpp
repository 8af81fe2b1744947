#include "fedrecon/channel.hpp"

#include <algorithm>
#include <cstring>
#include <functional>
#include <string_view>

#include "fedrecon/error.hpp"

namespace fedrecon::fl {
namespace {

std::uint64_t fingerprint(const double* values, std::size_t n) {
  return std::hash<std::string_view>{}(std::string_view(reinterpret_cast<const char*>(values), n * sizeof(double)));
}

std::string describe(const Message& m) {
  return std::string(to_string(m.kind)) + " round " + std::to_string(m.round) + " " + m.sender + "->" + m.receiver;
}

}  // namespace

void PrivacyAuditor::register_samples(std::span<const kspace::KSpaceSample> samples) {
  for (const auto& s : samples) {
    fingerprints_.insert(fingerprint(s.input.data().data(), s.input.numel()));
    fingerprints_.insert(fingerprint(s.reference.data().data(), s.reference.numel()));
  }
}

void PrivacyAuditor::register_dataset(const sites::SiteDataset& ds) {
  register_samples(ds.train);
  register_samples(ds.test);
}

void PrivacyAuditor::audit_tensor(const Message& m, const std::string& label, const ad::Tensor& t) const {
  const auto& s = t.shape();
  if (s.size() >= 2 && s[s.size() - 1] == image_size_ && s[s.size() - 2] == image_size_) {
    throw PrivacyViolation(describe(m) + ": " + label + " has image shape " + ad::shape_to_string(s));
  }
  const std::size_t plane = image_size_ * image_size_;
  if (fingerprints_.empty() || t.numel() < plane) return;
  const double* base = t.data().data();
  for (std::size_t off = 0; off + plane <= t.numel(); off += plane) {
    if (fingerprints_.contains(fingerprint(base + off, plane))) {
      throw PrivacyViolation(describe(m) + ": " + label + " embeds a dataset sample at element " + std::to_string(off));
    }
  }
}

void PrivacyAuditor::audit(const Message& m) const {
  if (const auto* params = std::get_if<ParamSet>(&m.payload)) {
    for (const auto& [name, t] : *params) audit_tensor(m, "parameter " + name, t);
  } else if (const auto* latent = std::get_if<model::LatentBatch>(&m.payload)) {
    audit_tensor(m, "latent batch", latent->features);
  }
}

void Channel::send(const Message& m) {
  const auto wire = encode_message(m);
  Message delivered = decode_message(wire);
  auditor_.audit(delivered);
  std::lock_guard lock(mutex_);
  records_.push_back({m.kind, m.round, m.sender, m.receiver, wire.size()});
  inboxes_[m.receiver].push_back(std::move(delivered));
}

Message Channel::receive(const std::string& receiver, const std::string& sender) {
  std::lock_guard lock(mutex_);
  auto& box = inboxes_[receiver];
  auto it = std::find_if(box.begin(), box.end(), [&](const Message& m) { return m.sender == sender; });
  if (it == box.end()) throw Error(ErrorKind::kProtocol, receiver + " has no pending message from " + sender);
  Message m = std::move(*it);
  box.erase(it);
  return m;
}

bool Channel::has_pending(const std::string& receiver) const {
  std::lock_guard lock(mutex_);
  auto it = inboxes_.find(receiver);
  return it != inboxes_.end() && !it->second.empty();
}

std::vector<MessageRecord> Channel::records() const {
  std::lock_guard lock(mutex_);
  return records_;
}

std::size_t Channel::count(MessageKind kind) const {
  std::lock_guard lock(mutex_);
  return static_cast<std::size_t>(
      std::count_if(records_.begin(), records_.end(), [&](const MessageRecord& r) { return r.kind == kind; }));
}

std::size_t Channel::bytes(MessageKind kind) const {
  std::lock_guard lock(mutex_);
  std::size_t total = 0;
  for (const auto& r : records_) {
    if (r.kind == kind) total += r.bytes;
  }
  return total;
}

}  // namespace fedrecon::fl
