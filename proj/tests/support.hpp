#pragma once

#include "mpipe/seqdata.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>

namespace testing {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "t")
    {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("mpipe-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline std::string read_file(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const fs::path& p, const std::string& content)
{
    if (p.has_parent_path())
        fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << content;
}

// Random records with unique ids; FASTQ when `with_quality`.
inline std::vector<mpipe::seq::SequenceRecord> random_records(std::size_t n, std::uint64_t seed,
                                                              bool with_quality)
{
    std::mt19937_64 rng(seed);
    static const char bases[] = "ACGTNacgtn";
    std::vector<mpipe::seq::SequenceRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        mpipe::seq::SequenceRecord r;
        r.id = "r" + std::to_string(i) + "_" + std::to_string(rng() % 1000);
        if (rng() % 2)
            r.description = "len=" + std::to_string(rng() % 500) + " x";
        std::size_t len = 1 + rng() % 150;
        for (std::size_t k = 0; k < len; ++k)
            r.bases.push_back(bases[rng() % 10]);
        if (with_quality) {
            std::vector<std::uint8_t> q(len);
            for (auto& v : q)
                v = static_cast<std::uint8_t>(rng() % 42);
            r.quality = q;
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace testing
