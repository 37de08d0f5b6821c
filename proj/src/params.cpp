#include "flowforge/params.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace flowforge {

template <typename T>
void ParamStore<T>::add(std::string name, Tensor<T> value) {
  if (contains(name)) throw std::logic_error("duplicate parameter name: " + name);
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{std::move(name), std::make_shared<Tensor<T>>(std::move(value)), false});
}

template <typename T>
const typename ParamStore<T>::Entry& ParamStore<T>::entry(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
  return entries_[it->second];
}

template <typename T>
typename ParamStore<T>::Entry& ParamStore<T>::entry(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
  return entries_[it->second];
}

template <typename T>
void ParamStore<T>::set_frozen(std::string_view prefix, bool frozen) {
  for (auto& e : entries_)
    if (e.name.starts_with(prefix)) e.frozen = frozen;
}

template <typename T>
std::size_t ParamStore<T>::parameter_count(std::string_view prefix) const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (e.name.starts_with(prefix)) n += e.value->size();
  return n;
}

template class ParamStore<float>;
template class ParamStore<double>;

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename U>
void put_le(std::string& buf, U v) {
  unsigned char bytes[sizeof(U)];
  std::memcpy(bytes, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
  buf.append(reinterpret_cast<const char*>(bytes), sizeof(U));
}

class Reader {
 public:
  Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    unsigned char bytes[sizeof(U)];
    std::memcpy(bytes, data_.data() + pos_, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
    pos_ += sizeof(U);
    U v;
    std::memcpy(&v, bytes, sizeof(U));
    return v;
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (data_.size() - pos_ < n)
      throw CheckpointError(path_ + ": truncated checkpoint while reading " + what + " at byte offset " +
                            std::to_string(pos_));
  }

  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const std::string& header, const ParamStore<float>& params) {
  std::string buf = "FFWT";
  put_le<std::uint32_t>(buf, kCheckpointVersion);
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(header.size()));
  buf += header;
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(params.entries().size()));
  for (const auto& e : params.entries()) {
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(e.name.size()));
    buf += e.name;
    const Shape s = e.value->shape();
    for (int d : {s.n, s.c, s.h, s.w}) put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(d));
    for (float v : e.value->data()) put_le<float>(buf, v);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw CheckpointError("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  Reader r(std::string(std::istreambuf_iterator<char>(in), {}), path);
  if (r.bytes(4, "magic") != "FFWT") throw CheckpointError(path + ": bad magic at byte offset 0 (expected FFWT)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw CheckpointError(path + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  const auto header_len = r.get<std::uint32_t>("header length");
  ck.header = r.bytes(header_len, "header");
  const auto count = r.get<std::uint32_t>("parameter count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor nt;
    const auto name_len = r.get<std::uint32_t>("name length");
    nt.name = r.bytes(name_len, "parameter name");
    int dims[4];
    for (int& d : dims) d = static_cast<int>(r.get<std::uint32_t>("shape"));
    const Shape s{dims[0], dims[1], dims[2], dims[3]};
    if (r.remaining() / sizeof(float) < s.numel())
      throw CheckpointError(path + ": truncated data for parameter " + nt.name + " at byte offset " +
                            std::to_string(r.pos()));
    std::vector<float> data(s.numel());
    for (auto& v : data) v = r.get<float>("parameter data");
    nt.value = Tensor<float>(s, std::move(data));
    ck.params.push_back(std::move(nt));
  }
  if (r.remaining() != 0)
    throw CheckpointError(path + ": " + std::to_string(r.remaining()) + " trailing bytes at offset " +
                          std::to_string(r.pos()));
  return ck;
}

}  // namespace flowforge
