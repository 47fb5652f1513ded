#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/crc.hpp>

#include "json.hpp"

#include "chronicle/error.hpp"
#include "chronicle/model.hpp"
#include "chronicle/train.hpp"

// Model artifact directory:
//   config.json  format version, ModelConfig, TrainConfig, tensor order
//   vocab.json   index <-> token spelling with concept-type tags
//   weights.bin  little-endian float32 tensors in layout order + CRC-64/XZ

namespace chronicle {

inline constexpr int kFormatVersion = 1;

using Crc64 = boost::crc_optimal<64, 0x42F0E1EBA9EA3693ULL, 0xFFFFFFFFFFFFFFFFULL,
                                 0xFFFFFFFFFFFFFFFFULL, true, true>;

inline std::uint64_t crc64(const void* data, std::size_t n) {
  Crc64 crc;
  crc.process_bytes(data, n);
  return crc.checksum();
}

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoFailure, "cannot write " + p.string());
  out << text;
  if (!out) throw Error(Errc::IoFailure, "write failed for " + p.string());
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

}  // namespace detail

inline void save_model(const Model<float>& m, const std::filesystem::path& dir,
                       const std::optional<TrainConfig>& tc = std::nullopt) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(Errc::IoFailure, "cannot create " + dir.string() + ": " + ec.message());

  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : m.layout.tensors) {
    tensors.push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}});
  }
  nlohmann::json config = {{"format_version", kFormatVersion},
                           {"model", m.config},
                           {"train", tc ? nlohmann::json(*tc) : nlohmann::json(nullptr)},
                           {"vocab_size", m.vocab_size()},
                           {"dtype", "float32-le"},
                           {"checksum", "crc64-xz"},
                           {"tensors", std::move(tensors)}};
  detail::write_text(dir / "config.json", config.dump(2) + "\n");
  detail::write_text(dir / "vocab.json", m.vocab.to_json().dump(2) + "\n");

  std::string bytes(m.params.size() * 4, '\0');
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const std::uint32_t le = detail::to_le(std::bit_cast<std::uint32_t>(m.params[i]));
    std::memcpy(bytes.data() + i * 4, &le, 4);
  }
  const std::uint64_t crc = crc64(bytes.data(), bytes.size());
  for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<char>((crc >> (8 * b)) & 0xFF));
  detail::write_text(dir / "weights.bin", bytes);
}

struct ArtifactInfo {
  int format_version{0};
  std::optional<TrainConfig> train;
  std::uint64_t checksum{0};
};

/// Loads and verifies an artifact written by save_model().
inline Model<float> load_model(const std::filesystem::path& dir, ArtifactInfo* info = nullptr) {
  nlohmann::json config;
  try {
    config = nlohmann::json::parse(detail::read_text(dir / "config.json"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, std::string("config.json: ") + e.what());
  }
  const int version = config.value("format_version", 0);
  if (version != kFormatVersion) {
    throw Error(Errc::FormatVersionMismatch, "artifact format " + std::to_string(version) +
                                                 ", supported " + std::to_string(kFormatVersion));
  }
  Vocab vocab;
  ModelConfig mc;
  try {
    vocab = Vocab::from_json(nlohmann::json::parse(detail::read_text(dir / "vocab.json")));
    mc = config.at("model").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, std::string("artifact metadata: ") + e.what());
  }
  Model<float> m(mc, std::move(vocab));
  const auto& tensors = config.at("tensors");
  if (tensors.size() != m.layout.tensors.size()) {
    throw Error(Errc::ParseError, "tensor list does not match configuration");
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = m.layout.tensors[i];
    if (tensors[i].at("name").get<std::string>() != t.name ||
        tensors[i].at("shape") != nlohmann::json({t.rows, t.cols})) {
      throw Error(Errc::ParseError, "tensor " + t.name + " does not match configuration");
    }
  }

  const std::string bytes = detail::read_text(dir / "weights.bin");
  const std::size_t payload = m.params.size() * 4;
  if (bytes.size() != payload + 8) {
    throw Error(Errc::ChecksumMismatch, "weights.bin has " + std::to_string(bytes.size()) +
                                            " bytes, expected " + std::to_string(payload + 8));
  }
  std::uint64_t stored = 0;
  for (int b = 0; b < 8; ++b) {
    stored |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[payload + static_cast<std::size_t>(b)]))
              << (8 * b);
  }
  const std::uint64_t actual = crc64(bytes.data(), payload);
  if (stored != actual) throw Error(Errc::ChecksumMismatch, "weights.bin checksum mismatch");
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    std::uint32_t le = 0;
    std::memcpy(&le, bytes.data() + i * 4, 4);
    m.params[i] = std::bit_cast<float>(detail::to_le(le));
  }
  if (info) {
    info->format_version = version;
    info->checksum = actual;
    if (config.contains("train") && !config.at("train").is_null()) {
      info->train = config.at("train").get<TrainConfig>();
    }
  }
  return m;
}

}  // namespace chronicle
