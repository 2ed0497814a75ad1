#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mppbsde/lattice.hpp"
#include "mppbsde/reflection.hpp"

namespace mppbsde {

// 17 significant digits, '.' decimal point, independent of the global locale.
std::string format_double(double x);

class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);

    CsvWriter& operator<<(double x);
    CsvWriter& operator<<(long long x);
    CsvWriter& operator<<(const std::string& s);
    void end_row();

private:
    void separator();

    std::ofstream out_;
    bool row_started_ = false;
};

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const nlohmann::json& doc);

// ValueField as rows (layer_time, n1..nK, y, u1..uK).
void write_value_field(const std::filesystem::path& path, const ValueField& field);

// Reflection curves (t, K, R, L, margin).
void write_reflection(const std::filesystem::path& path, const ReflectedSolution& sol);

nlohmann::json residual_json(const ResidualStats& stats);

struct RunManifest {
    std::string command;
    std::string scenario_hash;
    std::string tool_version;
    std::vector<std::uint64_t> seeds;
    std::vector<std::pair<std::string, std::string>> files; // relative path, sha256
    double wall_clock = 0.0;
    nlohmann::json summary = nlohmann::json::object();
    int exit_code = 0;

    void add_file(const std::filesystem::path& out_dir, const std::string& name);
    [[nodiscard]] nlohmann::json to_json() const;
};

const char* tool_version();

} // namespace mppbsde
