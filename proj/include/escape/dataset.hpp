#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "escape/common.hpp"
#include "escape/pose.hpp"

namespace escape {

// Line-delimited dataset format: a header object followed by one record
// object per line. Chosen over binary for inspectability at this scale;
// numbers round-trip exactly (shortest-exact serialization).

constexpr int kDatasetVersion = 1;

namespace detail {

inline nlohmann::json pose_to_json(const Pose& p) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& j : p.joints) arr.push_back({j.x, j.y, j.z});
    return arr;
}

inline Pose pose_from_json(const nlohmann::json& arr, std::size_t expected_joints) {
    if (!arr.is_array() || arr.size() != expected_joints)
        throw SchemaError("dataset: pose joint count does not match schema");
    Pose p(expected_joints);
    for (std::size_t j = 0; j < expected_joints; ++j) {
        const auto& triple = arr[j];
        if (!triple.is_array() || triple.size() != 3)
            throw SchemaError("dataset: joint is not a 3-vector");
        p.joints[j] = {triple[0].get<double>(), triple[1].get<double>(), triple[2].get<double>()};
    }
    return p;
}

} // namespace detail

inline void write_dataset(const std::string& path, const std::vector<SampleRecord>& records,
                          const KeypointSchema& schema) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("write_dataset: cannot open " + path);
    nlohmann::json header = {{"format", "escape-dataset"},
                             {"version", kDatasetVersion},
                             {"schema", schema.name}};
    os << header.dump() << "\n";
    for (const auto& rec : records) {
        nlohmann::json line = {{"id", rec.id},
                               {"split", rec.split == Split::train ? "train" : "test"},
                               {"pred", detail::pose_to_json(rec.predicted)}};
        if (rec.ground_truth) line["gt"] = detail::pose_to_json(*rec.ground_truth);
        os << line.dump() << "\n";
    }
    if (!os) throw IoError("write_dataset: write failed for " + path);
}

inline std::vector<SampleRecord> read_dataset(const std::string& path,
                                              const KeypointSchema& schema) {
    std::ifstream is(path);
    if (!is) throw IoError("read_dataset: cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw SchemaError("read_dataset: missing header line");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
        throw SchemaError("read_dataset: header is not valid JSON");
    }
    if (header.value("format", "") != "escape-dataset")
        throw SchemaError("read_dataset: not an escape dataset file");
    if (header.value("version", -1) != kDatasetVersion)
        throw SchemaError("read_dataset: unrecognized format version");
    if (header.value("schema", "") != schema.name)
        throw SchemaError("read_dataset: schema mismatch (file: " +
                          header.value("schema", std::string("?")) + ")");

    std::vector<SampleRecord> records;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception&) {
            throw SchemaError("read_dataset: line " + std::to_string(line_no) +
                              " is not valid JSON");
        }
        SampleRecord rec;
        rec.id = obj.value("id", "");
        const std::string split = obj.value("split", "test");
        rec.split = split == "train" ? Split::train : Split::test;
        if (!obj.contains("pred"))
            throw SchemaError("read_dataset: line " + std::to_string(line_no) + " lacks pred");
        rec.predicted = detail::pose_from_json(obj["pred"], schema.joint_count);
        if (obj.contains("gt")) rec.ground_truth = detail::pose_from_json(obj["gt"], schema.joint_count);
        records.push_back(std::move(rec));
    }
    return records;
}

} // namespace escape
