#include "esam3/numerics/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "esam3/error.hpp"

namespace esam3::num {

namespace {

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

std::string payload_bytes(const Tensor& t) {
  std::string out(t.numel() * sizeof(double), '\0');
  for (std::size_t i = 0; i < t.numel(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(t[i]);
    for (int b = 0; b < 8; ++b) out[i * 8 + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  return out;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  const std::string payload = payload_bytes(t);
  nlohmann::json header = {{"dtype", "f64le"}, {"shape", t.shape()}, {"fnv1a", hex64(fnv1a(payload))}};
  os << header.dump() << '\n';
  os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!os) fail(ErrorKind::kIo, "write_tensor: stream error");
}

Tensor read_tensor(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) fail(ErrorKind::kIo, "read_tensor: missing header");
  nlohmann::json header;
  Shape shape;
  std::string checksum;
  try {
    header = nlohmann::json::parse(line);
    if (header.at("dtype") != "f64le") fail(ErrorKind::kIo, "read_tensor: unsupported dtype");
    shape = header.at("shape").get<Shape>();
    checksum = header.at("fnv1a").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kIo, std::string("read_tensor: bad header: ") + e.what());
  }
  std::size_t n = 0;
  try {
    n = shape_numel(shape);
  } catch (const Error&) {
    fail(ErrorKind::kIo, "read_tensor: invalid shape in header");
  }
  std::string payload(n * sizeof(double), '\0');
  is.read(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (static_cast<std::size_t>(is.gcount()) != payload.size()) fail(ErrorKind::kIo, "read_tensor: truncated payload");
  if (is.peek() != std::char_traits<char>::eof()) fail(ErrorKind::kIo, "read_tensor: trailing bytes");
  if (hex64(fnv1a(payload)) != checksum) fail(ErrorKind::kIo, "read_tensor: checksum mismatch");
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (int b = 7; b >= 0; --b) bits = (bits << 8) | static_cast<unsigned char>(payload[i * 8 + static_cast<std::size_t>(b)]);
    data[i] = std::bit_cast<double>(bits);
  }
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  // Write-then-rename so concurrent readers never see a partial file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) fail(ErrorKind::kIo, "cannot open " + tmp.string() + " for writing");
    write_tensor(os, t);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::kIo, "cannot move " + tmp.string() + " into place: " + ec.message());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::kIo, "cannot open " + path.string());
  return read_tensor(is);
}

}  // namespace esam3::num
