#include "promptseg/tensor_archive.hpp"

#include <cstring>
#include <fstream>

#include "promptseg/error.hpp"

namespace promptseg {

namespace {

constexpr char kMagic[8] = {'P', 'S', 'E', 'G', 'T', 'N', 'S', 'R'};

const char* dtype_name(TensorArchive::DType d) { return d == TensorArchive::DType::F32 ? "f32" : "f64"; }

template <typename Scalar>
std::vector<std::byte> raw_bytes(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& m) {
  std::vector<std::byte> out(static_cast<std::size_t>(m.size()) * sizeof(Scalar));
  std::memcpy(out.data(), m.data(), out.size());
  return out;
}

template <typename Out, typename In>
void convert(const std::vector<std::byte>& bytes, Out* dst, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    In v;
    std::memcpy(&v, bytes.data() + i * sizeof(In), sizeof(In));
    dst[i] = static_cast<Out>(v);
  }
}

}  // namespace

void TensorArchive::put(const std::string& name, const MatrixF& value) {
  entries_[name] = Entry{DType::F32, value.rows(), value.cols(), raw_bytes(value)};
}

void TensorArchive::put(const std::string& name, const MatrixD& value) {
  entries_[name] = Entry{DType::F64, value.rows(), value.cols(), raw_bytes(value)};
}

const TensorArchive::Entry& TensorArchive::entry(const std::string& name, long rows, long cols) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw FormatError("tensor '" + name + "' missing from archive");
  const Entry& e = it->second;
  if ((rows >= 0 && e.rows != rows) || (cols >= 0 && e.cols != cols)) {
    throw FormatError("tensor '" + name + "' has shape " + std::to_string(e.rows) + "x" + std::to_string(e.cols) +
                      ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  return e;
}

MatrixF TensorArchive::get_f32(const std::string& name, long rows, long cols) const {
  const Entry& e = entry(name, rows, cols);
  MatrixF out(e.rows, e.cols);
  const auto n = static_cast<std::size_t>(out.size());
  if (e.dtype == DType::F32) {
    convert<float, float>(e.bytes, out.data(), n);
  } else {
    convert<float, double>(e.bytes, out.data(), n);
  }
  return out;
}

MatrixD TensorArchive::get_f64(const std::string& name, long rows, long cols) const {
  const Entry& e = entry(name, rows, cols);
  MatrixD out(e.rows, e.cols);
  const auto n = static_cast<std::size_t>(out.size());
  if (e.dtype == DType::F32) {
    convert<double, float>(e.bytes, out.data(), n);
  } else {
    convert<double, double>(e.bytes, out.data(), n);
  }
  return out;
}

std::vector<std::string> TensorArchive::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

void TensorArchive::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["metadata"] = metadata_;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, e] : entries_) {
    header["tensors"].push_back(
        {{"name", name}, {"dtype", dtype_name(e.dtype)}, {"rows", e.rows}, {"cols", e.cols}, {"offset", offset}});
    offset += e.bytes.size();
  }
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const std::uint32_t version = kVersion;
  const std::uint64_t length = text.size();
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&length), sizeof(length));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, e] : entries_) {
    out.write(reinterpret_cast<const char*>(e.bytes.data()), static_cast<std::streamsize>(e.bytes.size()));
  }
  if (!out) throw FormatError("write failed: " + path.string());
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open archive: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) throw FormatError("not a tensor archive: " + path.string());
  std::uint32_t version = 0;
  std::uint64_t length = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&length), sizeof(length));
  if (!in || version != kVersion) {
    throw FormatError("unsupported archive version " + std::to_string(version) + " in " + path.string());
  }
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw FormatError("truncated archive header: " + path.string());

  TensorArchive archive;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corrupt archive header: ") + e.what());
  }
  archive.metadata_ = header.value("metadata", nlohmann::json::object());
  for (const auto& t : header.at("tensors")) {
    Entry e;
    e.dtype = t.at("dtype").get<std::string>() == "f32" ? DType::F32 : DType::F64;
    e.rows = t.at("rows").get<long>();
    e.cols = t.at("cols").get<long>();
    const std::size_t elem = e.dtype == DType::F32 ? sizeof(float) : sizeof(double);
    e.bytes.resize(static_cast<std::size_t>(e.rows * e.cols) * elem);
    in.read(reinterpret_cast<char*>(e.bytes.data()), static_cast<std::streamsize>(e.bytes.size()));
    if (!in) throw FormatError("truncated tensor payload '" + t.at("name").get<std::string>() + "'");
    archive.entries_.emplace(t.at("name").get<std::string>(), std::move(e));
  }
  return archive;
}

}  // namespace promptseg
