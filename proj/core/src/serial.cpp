#include "ctxtune/serial.hpp"

#include <cstring>

#include "ctxtune/errors.hpp"

namespace ctxtune {

namespace {
constexpr char kMagic[4] = {'C', 'T', 'X', 'B'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.append(b, 4);
}

void put_u64(std::string& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.append(b, 8);
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

void put_f64_array(std::string& out, const double* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) put_f64(out, data[i]);
}

void BlobWriter::add(const std::string& name, std::string payload) {
  sections_.emplace_back(name, std::move(payload));
}

std::string BlobWriter::finish() const {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(sections_.size()));
  for (const auto& [name, payload] : sections_) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    put_u64(out, payload.size());
    out.append(payload);
  }
  return out;
}

BlobReader::BlobReader(const std::string& bytes) {
  PayloadReader r(bytes);
  if (r.raw(4) != std::string(kMagic, 4)) throw io_error("checkpoint blob: bad magic");
  if (r.u32() != kVersion) throw io_error("checkpoint blob: unsupported version");
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.raw(r.u32());
    std::string payload = r.raw(static_cast<std::size_t>(r.u64()));
    sections_.emplace_back(std::move(name), std::move(payload));
  }
}

bool BlobReader::has(const std::string& name) const {
  for (const auto& [n, p] : sections_)
    if (n == name) return true;
  return false;
}

const std::string& BlobReader::section(const std::string& name) const {
  for (const auto& [n, p] : sections_)
    if (n == name) return p;
  throw io_error("checkpoint blob: missing section '" + name + "'");
}

void PayloadReader::need(std::size_t n) const {
  if (pos_ + n > bytes_.size()) throw io_error("checkpoint blob: truncated");
}

std::uint32_t PayloadReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t PayloadReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
  pos_ += 8;
  return v;
}

double PayloadReader::f64() {
  const std::uint64_t bits = u64();
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

void PayloadReader::f64_array(double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = f64();
}

std::string PayloadReader::raw(std::size_t n) {
  need(n);
  std::string s = bytes_.substr(pos_, n);
  pos_ += n;
  return s;
}

}  // namespace ctxtune
