#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ctxtune {

// Tagged binary container used for agent/network checkpoints.
//
// Layout (all integers little-endian, doubles raw IEEE-754):
//   "CTXB" | u32 version | u32 n_sections
//   n_sections x ( u32 name_len | name bytes | u64 payload_len | payload )
//
// Payload bytes are opaque to the container. Writing the same logical state
// twice yields identical bytes, which the population scheduler relies on
// when copying checkpoints between members.

void put_u32(std::string& out, std::uint32_t v);
void put_u64(std::string& out, std::uint64_t v);
void put_f64(std::string& out, double v);
void put_f64_array(std::string& out, const double* data, std::size_t n);

class BlobWriter {
 public:
  void add(const std::string& name, std::string payload);
  std::string finish() const;

 private:
  std::vector<std::pair<std::string, std::string>> sections_;
};

class BlobReader {
 public:
  explicit BlobReader(const std::string& bytes);  // throws io_error on malformed input
  bool has(const std::string& name) const;
  const std::string& section(const std::string& name) const;  // throws io_error if absent
  std::size_t count() const { return sections_.size(); }

 private:
  std::vector<std::pair<std::string, std::string>> sections_;
};

// Cursor over a section payload.
class PayloadReader {
 public:
  explicit PayloadReader(const std::string& bytes) : bytes_(bytes) {}
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  void f64_array(double* out, std::size_t n);
  std::string raw(std::size_t n);
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const;
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace ctxtune
