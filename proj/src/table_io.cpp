#include "table_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace hk {
namespace {

constexpr char kMagic[4] = {'H', 'K', 'T', '1'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = (v >> (8 * i)) & 0xff;
    os.write(reinterpret_cast<char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = (v >> (8 * i)) & 0xff;
    os.write(reinterpret_cast<char*>(b), 8);
}

void put_f64s(std::ostream& os, const std::vector<double>& xs) {
    for (double x : xs) {
        uint64_t bits;
        std::memcpy(&bits, &x, 8);
        put_u64(os, bits);
    }
}

void put_string(std::ostream& os, const std::string& s) {
    put_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(b[i]) << (8 * i);
    return v;
}

uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
    return v;
}

std::vector<double> get_f64s(std::istream& is, uint64_t n) {
    std::vector<double> xs(n);
    for (uint64_t i = 0; i < n; ++i) {
        uint64_t bits = get_u64(is);
        double x;
        std::memcpy(&x, &bits, 8);
        xs[i] = x;
    }
    return xs;
}

std::string get_string(std::istream& is, uint64_t cap = 1ull << 24) {
    uint64_t n = get_u64(is);
    if (n > cap) throw FormatError("table header: string length corrupt");
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    return s;
}

} // namespace

void write_table(const KernelTable& table, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write(kMagic, 4);
    put_u32(os, kVersion);
    put_u32(os, static_cast<uint32_t>(table.kind));
    put_string(os, table.model_json);
    put_string(os, table.coupling_json);
    put_string(os, table.metadata_json);
    put_u64(os, table.radii.size());
    put_u64(os, table.times.size());
    put_f64s(os, table.radii);
    put_f64s(os, table.times);
    if (table.values.size() != table.radii.size() * table.times.size())
        throw IoError("table values size does not match the grids");
    put_f64s(os, table.values);
    if (!os) throw IoError("write failed: " + path);
}

KernelTable read_table(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("not an HKT1 table: " + path);
    const uint32_t version = get_u32(is);
    if (version != kVersion)
        throw FormatError("unsupported table format version " +
                          std::to_string(version));
    KernelTable t;
    t.kind = static_cast<TableKind>(get_u32(is));
    t.model_json = get_string(is);
    t.coupling_json = get_string(is);
    t.metadata_json = get_string(is);
    const uint64_t n_r = get_u64(is);
    const uint64_t n_t = get_u64(is);
    if (n_r == 0 || n_t == 0 || n_r * n_t > (1ull << 32))
        throw FormatError("table grid sizes corrupt");
    t.radii = get_f64s(is, n_r);
    t.times = get_f64s(is, n_t);
    t.values = get_f64s(is, n_r * n_t);
    if (!is) throw FormatError("truncated table file: " + path);
    return t;
}

void write_table_csv(const KernelTable& table, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "t,r,value\n";
    os.precision(17);
    for (size_t it = 0; it < table.n_t(); ++it)
        for (size_t ir = 0; ir < table.n_r(); ++ir)
            os << table.times[it] << ',' << table.radii[ir] << ','
               << table.at(it, ir) << '\n';
    if (!os) throw IoError("write failed: " + path);
}

void write_report_json(const std::string& json_text, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << json_text << '\n';
    if (!os) throw IoError("write failed: " + path);
}

} // namespace hk
