#pragma once

#include <stdexcept>
#include <string>

namespace poems {

/// Dimension disagreement between operands.
struct shape_error : std::runtime_error {
    explicit shape_error(const std::string& what) : std::runtime_error(what) {}
};

/// Caller violated a documented precondition.
struct contract_error : std::runtime_error {
    explicit contract_error(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite value or numeric guard tripped; message names the offending term.
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input file; message carries the line number.
struct ingest_error : std::runtime_error {
    explicit ingest_error(const std::string& what) : std::runtime_error(what) {}
};

} // namespace poems
