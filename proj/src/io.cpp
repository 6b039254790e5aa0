#include "palora/io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace palora::io {

namespace {
const char kMagic[4] = {'P', 'L', 'R', 'A'};
}

void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& os, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    write_u64(os, bits);
}

uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("unexpected end of file reading u32");
    uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw IoError("unexpected end of file reading u64");
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

double read_f64(std::istream& is) {
    const uint64_t bits = read_u64(is);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

void write_magic(std::ostream& os) { os.write(kMagic, 4); }

void read_magic(std::istream& is, const std::string& context) {
    char got[4];
    is.read(got, 4);
    if (!is || std::memcmp(got, kMagic, 4) != 0)
        throw IoError("bad magic in " + context + " (expected PLRA)");
    const uint32_t version = read_u32(is);
    if (version != kFormatVersion)
        throw IoError("unsupported format version " + std::to_string(version) +
                      " in " + context);
}

void write_matrix(std::ostream& os, const Matrix& m) {
    write_magic(os);
    write_u32(os, kFormatVersion);
    write_u64(os, m.rows);
    write_u64(os, m.cols);
    for (double v : m.data) write_f64(os, v);
}

Matrix read_matrix(std::istream& is) {
    read_magic(is, "matrix block");
    const uint64_t rows = read_u64(is);
    const uint64_t cols = read_u64(is);
    if (rows > (1u << 24) || cols > (1u << 24))
        throw IoError("matrix block dimensions implausibly large");
    Matrix m(static_cast<size_t>(rows), static_cast<size_t>(cols));
    for (double& v : m.data) v = read_f64(is);
    return m;
}

void save_matrix(const std::string& path, const Matrix& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    write_matrix(os, m);
    if (!os) throw IoError("write failed: " + path);
}

Matrix load_matrix(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    return read_matrix(is);
}

void write_bits(std::ostream& os, const std::vector<uint8_t>& bits) {
    const size_t nbytes = (bits.size() + 7) / 8;
    std::vector<unsigned char> packed(nbytes, 0);
    for (size_t i = 0; i < bits.size(); ++i)
        if (bits[i]) packed[i / 8] |= static_cast<unsigned char>(1u << (i % 8));
    os.write(reinterpret_cast<const char*>(packed.data()),
             static_cast<std::streamsize>(nbytes));
}

std::vector<uint8_t> read_bits(std::istream& is, size_t n) {
    const size_t nbytes = (n + 7) / 8;
    std::vector<unsigned char> packed(nbytes);
    is.read(reinterpret_cast<char*>(packed.data()), static_cast<std::streamsize>(nbytes));
    if (!is) throw IoError("unexpected end of file reading bit array");
    std::vector<uint8_t> bits(n);
    for (size_t i = 0; i < n; ++i)
        bits[i] = (packed[i / 8] >> (i % 8)) & 1u;
    return bits;
}

void write_container(const std::string& path, const std::vector<Section>& sections) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    write_magic(os);
    write_u32(os, kFormatVersion);
    write_u32(os, static_cast<uint32_t>(sections.size()));
    for (const Section& s : sections) {
        write_u32(os, s.tag);
        write_u64(os, s.payload.size());
        os.write(s.payload.data(), static_cast<std::streamsize>(s.payload.size()));
    }
    if (!os) throw IoError("write failed: " + path);
}

std::vector<Section> read_container(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    read_magic(is, path);
    const uint32_t n = read_u32(is);
    std::vector<Section> sections(n);
    for (Section& s : sections) {
        s.tag = read_u32(is);
        const uint64_t bytes = read_u64(is);
        s.payload.resize(bytes);
        is.read(s.payload.data(), static_cast<std::streamsize>(bytes));
        if (!is) throw IoError("truncated section in " + path);
    }
    return sections;
}

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write failed: " + path);
}

uint64_t file_hash(const std::string& path) {
    const std::string bytes = read_file(path);
    return fnv1a(bytes.data(), bytes.size());
}

}  // namespace palora::io
