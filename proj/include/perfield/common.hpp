// Copyright Contributors to the PerField Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace perfield {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Vec3i = Eigen::Vector3i;

/// Raised when an operation receives arguments that violate its preconditions.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a file cannot be read or written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Logging. Verbosity comes from the PERFIELD_LOG environment variable:
// 0 = silent, 1 = warnings (default), 2 = info, 3 = debug.

enum class LogLevel : int { kWarn = 1, kInfo = 2, kDebug = 3 };

inline int log_verbosity() {
    static const int level = [] {
        const char *env = std::getenv("PERFIELD_LOG");
        if (env == nullptr || *env == '\0') return 1;
        std::string_view v(env);
        if (v == "debug") return 3;
        if (v == "info") return 2;
        if (v == "warn") return 1;
        if (v == "off" || v == "silent") return 0;
        return std::atoi(env);
    }();
    return level;
}

inline bool log_enabled(LogLevel lvl) { return log_verbosity() >= static_cast<int>(lvl); }

template <typename... Args>
void log(LogLevel lvl, Args &&...args) {
    if (!log_enabled(lvl)) return;
    static constexpr const char *kTags[] = {"", "warn", "info", "debug"};
    std::cerr << "[perfield:" << kTags[static_cast<int>(lvl)] << "] ";
    (std::cerr << ... << args);
    std::cerr << '\n';
}

// ---------------------------------------------------------------------------
// Parallelism

/// Splits [0, n) into `workers` contiguous chunks and runs fn(begin, end, worker)
/// on each. Chunk boundaries depend only on n and workers.
inline void parallel_chunks(std::size_t n, int workers,
                            const std::function<void(std::size_t, std::size_t, int)> &fn) {
    workers = std::max(1, workers);
    if (workers == 1 || n < 2) {
        fn(0, n, 0);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        std::size_t b = n * static_cast<std::size_t>(w) / static_cast<std::size_t>(workers);
        std::size_t e = n * static_cast<std::size_t>(w + 1) / static_cast<std::size_t>(workers);
        pool.emplace_back([&fn, b, e, w] { fn(b, e, w); });
    }
    for (auto &t : pool) t.join();
}

// ---------------------------------------------------------------------------
// Files

/// Writes `bytes` to `path` via a sibling temporary file and a rename, so a
/// failed write never leaves a partial file at `path`.
inline void write_file_atomic(const std::filesystem::path &path, std::string_view bytes) {
    namespace fs = std::filesystem;
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            out.close();
            std::error_code ec;
            fs::remove(tmp, ec);
            throw IoError("write failed: " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError("cannot rename into place: " + path.string());
    }
}

inline std::string read_file(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

} // namespace perfield
