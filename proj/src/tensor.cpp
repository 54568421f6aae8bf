#include "spp/tensor.hpp"

#include <bit>
#include <cmath>
#include <istream>
#include <iterator>
#include <ostream>

#include "spp/errors.hpp"

namespace spp {

namespace {

// Sanity cap so a corrupt header cannot trigger a huge allocation.
constexpr std::uint64_t kMaxRank = 8;
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_str(shape_) + " does not match " +
                     std::to_string(data_.size()) + " elements");
  }
}

Tensor Tensor::vector(std::vector<double> v) {
  Shape s{v.size()};
  return Tensor(std::move(s), std::move(v));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(data));
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void append_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void append_f64(std::string& buf, double v) { append_u64(buf, std::bit_cast<std::uint64_t>(v)); }

std::string encode_tensor_blob(const Tensor& t) {
  std::string buf;
  buf.reserve(8 * (1 + t.rank() + t.size()));
  append_u64(buf, t.rank());
  for (auto d : t.shape()) append_u64(buf, d);
  for (double v : t.data()) append_f64(buf, v);
  return buf;
}

void write_tensor_blob(std::ostream& out, const Tensor& t) {
  const std::string buf = encode_tensor_blob(t);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

std::uint64_t decode_u64(std::span<const char> bytes, std::size_t& offset) {
  if (offset + 8 > bytes.size()) throw ParseError("truncated integer field", offset);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= std::uint64_t{static_cast<unsigned char>(bytes[offset + i])} << (8 * i);
  }
  offset += 8;
  return v;
}

Tensor decode_tensor_blob(std::span<const char> bytes, std::size_t& offset) {
  const std::size_t start = offset;
  const std::uint64_t rank = decode_u64(bytes, offset);
  if (rank > kMaxRank) throw ParseError("tensor rank " + std::to_string(rank) + " out of range", start);
  Shape shape(rank);
  std::uint64_t numel = 1;
  for (auto& d : shape) {
    const std::size_t at = offset;
    d = decode_u64(bytes, offset);
    numel *= d;
    if (numel > kMaxElements) throw ParseError("tensor too large", at);
  }
  if (offset + 8 * numel > bytes.size()) throw ParseError("truncated tensor data", offset);
  std::vector<double> data(numel);
  for (auto& v : data) v = std::bit_cast<double>(decode_u64(bytes, offset));
  return Tensor(std::move(shape), std::move(data));
}

Tensor read_tensor_blob(std::istream& in) {
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t offset = 0;
  return decode_tensor_blob(bytes, offset);
}

}  // namespace spp
