#pragma once

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mbpp/core/error.hpp"

namespace mbpp::harness {

/// Advisory lock guarding the result store against interleaved writers.
/// flock-based; released on destruction.
class StoreLock {
public:
    explicit StoreLock(const std::string& store_path) : path_(store_path + ".lock") {
        fd_ = ::open(path_.c_str(), O_CREAT | O_RDWR, 0644);
        if (fd_ < 0) throw Error("cannot create lock file " + path_);
        if (::flock(fd_, LOCK_EX) != 0) {
            ::close(fd_);
            throw Error("cannot acquire lock " + path_);
        }
    }

    ~StoreLock() {
        if (fd_ >= 0) {
            ::flock(fd_, LOCK_UN);
            ::close(fd_);
        }
    }

    StoreLock(const StoreLock&) = delete;
    StoreLock& operator=(const StoreLock&) = delete;

private:
    std::string path_;
    int fd_ = -1;
};

/// Append-only JSON-lines result store, one experiment record per line.
/// Appends are serialized through the lock file so concurrent runs never
/// interleave partial records.
inline void append_record(const std::string& store_path, const nlohmann::json& record) {
    const auto parent = std::filesystem::path(store_path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    StoreLock lock(store_path);
    std::ofstream out(store_path, std::ios::app);
    if (!out) throw Error("cannot open result store " + store_path);
    out << record.dump() << '\n';
    out.flush();
    if (!out) throw Error("write failed for result store " + store_path);
}

inline std::vector<nlohmann::json> read_records(const std::string& store_path) {
    std::vector<nlohmann::json> records;
    std::ifstream in(store_path);
    if (!in) return records;  // an absent store is an empty store
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            records.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(ParseError::Kind::malformed,
                             store_path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return records;
}

}  // namespace mbpp::harness
