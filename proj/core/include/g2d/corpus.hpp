#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace g2d {

// Structured binary-format failures; the kind distinguishes the
// documented error cases.
class FormatError : public std::runtime_error {
public:
    enum class Kind { BadMagic, BadVersion, Truncated, NameMismatch, ShapeMismatch, Io };

    FormatError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

// Fixed caption grammar: [shape, position, size] for records with a
// finding, [no-finding] otherwise. Ids are stable across runs.
struct Vocab {
    static constexpr std::uint32_t kPad = 0;
    static constexpr std::uint32_t kNoFinding = 1;
    static constexpr std::uint32_t kShape0 = 2;      // disk, square, cross
    static constexpr std::uint32_t kPosition0 = 5;   // 3x3 grid, row-major
    static constexpr std::uint32_t kSize0 = 14;      // small, medium, large
    static constexpr std::uint32_t kWords = 17;

    static std::uint32_t shape_word(int s) { return kShape0 + static_cast<std::uint32_t>(s); }
    static std::uint32_t position_word(int p) {
        return kPosition0 + static_cast<std::uint32_t>(p);
    }
    static std::uint32_t size_word(int s) { return kSize0 + static_cast<std::uint32_t>(s); }
    static std::string word_name(std::uint32_t id);
};

struct Record {
    std::vector<float> image;          // img_hw*img_hw, row-major, in [0,1]
    std::vector<std::uint32_t> tokens;
    std::uint8_t label = 0;            // 1 iff gt_mask nonempty
    std::vector<std::uint8_t> gt_mask;  // evaluation only, never a training input

    bool operator==(const Record&) const = default;
};

struct CorpusConfig {
    std::uint32_t n_records = 512;
    std::uint32_t img_hw = 32;
    std::uint32_t vocab = 32;
    std::uint32_t maxlen = 8;
    double noise_sigma = 0.02;
    // bright elliptical body on a dark background
    double body_rx_frac = 0.42;
    double body_ry_frac = 0.36;
    std::uint64_t seed = 0;

    void validate() const;
};

// One record per (seed, index) stream: generation order and thread count
// cannot change the output.
std::vector<Record> generate_corpus(const CorpusConfig& cfg, int threads = 1);
Record generate_record(const CorpusConfig& cfg, std::uint64_t index);

// body region of the synthetic template (noise-free geometry)
std::vector<std::uint8_t> body_region(const CorpusConfig& cfg);

// "G2DS" container, little-endian, bitwise lossless round-trip
void write_corpus(const std::string& path, const std::vector<Record>& records,
                  const CorpusConfig& cfg);
struct LoadedCorpus {
    std::vector<Record> records;
    std::uint32_t img_hw = 0;
    std::uint32_t vocab = 0;
    std::uint32_t maxlen = 0;
};
LoadedCorpus read_corpus(const std::string& path);

}  // namespace g2d
