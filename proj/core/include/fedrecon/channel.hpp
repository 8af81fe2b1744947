#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <string>
#include <unordered_set>
#include <vector>

#include "fedrecon/message.hpp"
#include "fedrecon/sites.hpp"

namespace fedrecon::fl {

// Rejects any message that could carry patient images: tensors whose two
// trailing dims both equal the image size, and any payload that contains a
// registered sample (input or reference) verbatim at an image-aligned offset.
class PrivacyAuditor {
 public:
  explicit PrivacyAuditor(std::size_t image_size) : image_size_(image_size) {}

  void register_samples(std::span<const kspace::KSpaceSample> samples);
  void register_dataset(const sites::SiteDataset& ds);

  // Throws PrivacyViolation.
  void audit(const Message& m) const;
  std::size_t image_size() const noexcept { return image_size_; }

 private:
  void audit_tensor(const Message& m, const std::string& label, const ad::Tensor& t) const;

  std::size_t image_size_;
  std::unordered_set<std::uint64_t> fingerprints_;
};

struct MessageRecord {
  MessageKind kind;
  std::uint32_t round;
  std::string sender;
  std::string receiver;
  std::size_t bytes;
};

// In-process transport. Every message is encoded, audited, and delivered as
// a freshly decoded copy, so endpoints never share storage. Safe for
// concurrent senders; delivery is FIFO per (sender, receiver).
class Channel {
 public:
  explicit Channel(PrivacyAuditor auditor) : auditor_(std::move(auditor)) {}

  void send(const Message& m);
  // Oldest pending message from `sender` to `receiver`; throws a protocol
  // error if there is none.
  Message receive(const std::string& receiver, const std::string& sender);
  bool has_pending(const std::string& receiver) const;

  std::vector<MessageRecord> records() const;
  std::size_t count(MessageKind kind) const;
  std::size_t bytes(MessageKind kind) const;
  const PrivacyAuditor& auditor() const noexcept { return auditor_; }

 private:
  PrivacyAuditor auditor_;
  mutable std::mutex mutex_;
  std::map<std::string, std::deque<Message>> inboxes_;
  std::vector<MessageRecord> records_;
};

}  // namespace fedrecon::fl
