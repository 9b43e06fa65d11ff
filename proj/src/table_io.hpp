#pragma once

#include <stdexcept>
#include <string>

#include "audit_report.hpp"
#include "kernel_engine.hpp"

namespace hk {

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Binary table container: magic "HKT1", format version, kind, the JSON
// blobs (model / coupling / metadata), then grid arrays and row-major
// values as little-endian 64-bit floats. write -> read roundtrips are
// bit-identical.
void write_table(const KernelTable& table, const std::string& path);
KernelTable read_table(const std::string& path);

// CSV mirror of the container: header line then one "t,r,value" row per
// (time, radius) cell, n_t * n_r rows total.
void write_table_csv(const KernelTable& table, const std::string& path);

void write_report_json(const std::string& json_text, const std::string& path);

} // namespace hk
