#pragma once

// Name-indexed tensor container persisted as a single file:
//
//   "VQLCBLOB" | u64le manifest_len | manifest (JSON) | payload (f64le)
//
// The manifest lists {name, rows, cols, offset} per entry (offset in bytes
// from the start of the payload) plus a free-form "meta" object. Entries are
// written in name order, so equal contents produce identical bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "vqlc/error.hpp"
#include "vqlc/tensor.hpp"

namespace vqlc {

namespace detail {

inline void put_u64le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw RuntimeError("short write to " + path.string());
}

}  // namespace detail

class TensorBlob {
 public:
  static constexpr std::string_view kMagic = "VQLCBLOB";

  void put(const std::string& name, const Tensor2& t) { entries_[name] = t; }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  const Tensor2& get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ValidationError("tensor blob: missing entry '" + name + "'");
    return it->second;
  }

  const std::map<std::string, Tensor2>& entries() const noexcept { return entries_; }
  nlohmann::json& meta() noexcept { return meta_; }
  const nlohmann::json& meta() const noexcept { return meta_; }

  std::string serialize() const {
    nlohmann::json manifest;
    manifest["format"] = "vqlc-tensor-blob";
    manifest["version"] = 1;
    manifest["meta"] = meta_.is_null() ? nlohmann::json::object() : meta_;
    manifest["entries"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : entries_) {
      manifest["entries"].push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}, {"offset", offset}});
      offset += t.size() * 8;
    }
    const std::string text = manifest.dump();
    std::string out(kMagic);
    detail::put_u64le(out, text.size());
    out += text;
    out.reserve(out.size() + offset);
    for (const auto& [_, t] : entries_) {
      for (double v : t.flat()) detail::put_u64le(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
  }

  static TensorBlob deserialize(std::string_view bytes) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 16 || bytes.substr(0, 8) != kMagic) throw ValidationError("tensor blob: bad magic");
    const std::uint64_t mlen = detail::get_u64le(p + 8);
    if (16 + mlen > bytes.size()) throw ValidationError("tensor blob: truncated manifest");
    nlohmann::json manifest;
    try {
      manifest = nlohmann::json::parse(bytes.substr(16, mlen));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("tensor blob: manifest is not JSON: ") + e.what());
    }
    const std::size_t base = 16 + mlen;
    TensorBlob blob;
    blob.meta_ = manifest.value("meta", nlohmann::json::object());
    for (const auto& e : manifest.at("entries")) {
      const auto rows = e.at("rows").get<std::size_t>();
      const auto cols = e.at("cols").get<std::size_t>();
      const auto off = e.at("offset").get<std::size_t>();
      if (base + off + rows * cols * 8 > bytes.size()) {
        throw ValidationError("tensor blob: entry '" + e.at("name").get<std::string>() + "' overruns payload");
      }
      Tensor2 t(rows, cols);
      for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = std::bit_cast<double>(detail::get_u64le(p + base + off + 8 * i));
      }
      blob.entries_[e.at("name").get<std::string>()] = std::move(t);
    }
    return blob;
  }

  void save(const std::filesystem::path& path) const { detail::write_file_bytes(path, serialize()); }

  static TensorBlob load(const std::filesystem::path& path) { return deserialize(detail::read_file_bytes(path)); }

 private:
  std::map<std::string, Tensor2> entries_;
  nlohmann::json meta_ = nlohmann::json::object();
};

}  // namespace vqlc
