#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "palora/matrix.hpp"

namespace palora::io {

// PLRA binary container. Every file starts with magic "PLRA" and a u32
// format version; all integers and doubles are little-endian. A matrix block
// repeats the magic/version header so blocks are self-describing:
//   "PLRA" | u32 version | u64 rows | u64 cols | rows*cols f64
// Container files carry a section table after the header:
//   "PLRA" | u32 version | u32 n_sections | { u32 tag | u64 bytes | payload }*
inline constexpr uint32_t kFormatVersion = 1;
inline constexpr uint32_t kSectionModel = 1;
inline constexpr uint32_t kSectionAdapters = 2;
inline constexpr uint32_t kSectionMasks = 3;

void write_u32(std::ostream& os, uint32_t v);
void write_u64(std::ostream& os, uint64_t v);
void write_f64(std::ostream& os, double v);
uint32_t read_u32(std::istream& is);
uint64_t read_u64(std::istream& is);
double read_f64(std::istream& is);

void write_magic(std::ostream& os);
void read_magic(std::istream& is, const std::string& context);

void write_matrix(std::ostream& os, const Matrix& m);
Matrix read_matrix(std::istream& is);

void save_matrix(const std::string& path, const Matrix& m);
Matrix load_matrix(const std::string& path);

void write_bits(std::ostream& os, const std::vector<uint8_t>& bits);
std::vector<uint8_t> read_bits(std::istream& is, size_t n);

struct Section {
    uint32_t tag = 0;
    std::string payload;
};

void write_container(const std::string& path, const std::vector<Section>& sections);
std::vector<Section> read_container(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);
uint64_t file_hash(const std::string& path);

}  // namespace palora::io
