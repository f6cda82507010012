// SPDX-License-Identifier: Apache-2.0

#include "delift/matrix_io.hpp"

#include <bit>
#include <chrono>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "delift/hashing.hpp"

namespace delift {
namespace {

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out.push_back(static_cast<char>((v >> s) & 0xFF));
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MatrixFormatError(fmt::format("cannot open {}", path.string()));
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    // Write to a temporary name first so an interrupted save never leaves a torn file.
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw MatrixFormatError(fmt::format("cannot write {}", tmp.string()));
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw MatrixFormatError(fmt::format("write failed for {}", tmp.string()));
    }
    std::filesystem::rename(tmp, path);
}

std::string utc_now() {
    return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}",
                       std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now()));
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
    auto p = path;
    p += ".meta.json";
    return p;
}

std::string encode_matrix(const Matrix& m) {
    if (m.rows() > UINT32_MAX || m.cols() > UINT32_MAX) {
        throw MatrixFormatError("matrix dimensions exceed the u32 header fields");
    }
    std::string out;
    out.reserve(kMatrixHeaderSize + m.values().size() * 4);
    out.append(kMatrixMagic, 4);
    put_u16(out, kMatrixVersion);
    out.push_back(static_cast<char>(m.meta().kernel ? 1 : 0));
    out.push_back(static_cast<char>(m.meta().distance));
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (float v : m.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

void save_matrix(const Matrix& m, const std::filesystem::path& path) {
    m.check_finite();
    nlohmann::ordered_json side;
    side["row_ids"] = m.row_ids();
    side["col_ids"] = m.col_ids();
    side["scorer_hash"] = m.meta().scorer_hash;
    side["template_hash"] = m.meta().template_hash;
    side["row_data_hash"] = m.meta().row_data_hash;
    side["col_data_hash"] = m.meta().col_data_hash;
    side["created_at"] = m.meta().created_at.empty() ? utc_now() : m.meta().created_at;
    side["distance"] = distance_name(m.meta().distance);
    side["length_normalization"] = m.meta().distance == DistanceKind::euclid_len_norm ? "sqrt_T" : "none";
    side["kernel"] = m.meta().kernel;
    if (!m.meta().scorer_descriptor.empty()) {
        side["scorer"] = nlohmann::ordered_json::parse(m.meta().scorer_descriptor);
    }
    write_file(path, encode_matrix(m));
    write_file(sidecar_path(path), side.dump(2) + "\n");
}

Matrix load_matrix(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::string name = path.string();
    if (bytes.size() < kMatrixHeaderSize) {
        throw MatrixFormatError(fmt::format("{}: truncated header ({} bytes)", name, bytes.size()));
    }
    if (std::memcmp(p, kMatrixMagic, 4) != 0) throw MatrixFormatError(fmt::format("{}: bad magic", name));
    const std::uint16_t version = static_cast<std::uint16_t>(p[4] | p[5] << 8);
    if (version != kMatrixVersion) {
        throw MatrixFormatError(fmt::format("{}: unsupported version {}", name, version));
    }
    const std::uint8_t flags = p[6];
    const std::uint8_t dist = p[7];
    if (dist > 1) throw MatrixFormatError(fmt::format("{}: unknown distance kind {}", name, dist));
    const std::uint32_t rows = get_u32(p + 8);
    const std::uint32_t cols = get_u32(p + 12);
    const std::uint64_t expected = kMatrixHeaderSize + std::uint64_t{rows} * cols * 4;
    if (bytes.size() != expected) {
        throw MatrixFormatError(fmt::format("{}: payload length {} does not match {}x{} header (expected {})",
                                            name, bytes.size(), rows, cols, expected));
    }

    nlohmann::ordered_json side;
    try {
        side = nlohmann::ordered_json::parse(read_file(sidecar_path(path)));
    } catch (const nlohmann::json::exception& e) {
        throw MatrixFormatError(fmt::format("{}: unreadable sidecar: {}", name, e.what()));
    }
    std::vector<std::string> row_ids;
    std::vector<std::string> col_ids;
    MatrixMeta meta;
    try {
        row_ids = side.at("row_ids").get<std::vector<std::string>>();
        col_ids = side.at("col_ids").get<std::vector<std::string>>();
        meta.scorer_hash = side.at("scorer_hash").get<std::string>();
        meta.template_hash = side.at("template_hash").get<std::string>();
        meta.row_data_hash = side.value("row_data_hash", "");
        meta.col_data_hash = side.value("col_data_hash", "");
        meta.created_at = side.value("created_at", "");
        if (side.contains("scorer")) meta.scorer_descriptor = side["scorer"].dump();
    } catch (const nlohmann::json::exception& e) {
        throw MatrixFormatError(fmt::format("{}: sidecar schema error: {}", name, e.what()));
    }
    if (row_ids.size() != rows || col_ids.size() != cols) {
        throw MatrixFormatError(fmt::format("{}: sidecar has {} row ids and {} col ids, header says {}x{}", name,
                                            row_ids.size(), col_ids.size(), rows, cols));
    }
    meta.kernel = (flags & 1u) != 0;
    meta.distance = static_cast<DistanceKind>(dist);

    std::vector<float> values(std::size_t{rows} * cols);
    for (std::size_t k = 0; k < values.size(); ++k) {
        values[k] = std::bit_cast<float>(get_u32(p + kMatrixHeaderSize + 4 * k));
    }
    try {
        return Matrix(std::move(row_ids), std::move(col_ids), std::move(values), std::move(meta));
    } catch (const std::exception& e) {
        throw MatrixFormatError(fmt::format("{}: {}", name, e.what()));
    }
}

std::string matrix_file_hash(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

}  // namespace delift
