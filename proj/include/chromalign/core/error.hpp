#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace chromalign {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Precondition or shape violation on a call.
class ContractError : public Error {
public:
    using Error::Error;
};

// Malformed model description; carries the offending field path.
class StructuralError : public Error {
public:
    StructuralError(std::string field, const std::string& what)
        : Error("structural error at '" + field + "': " + what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class NotFoundError : public Error {
public:
    using Error::Error;
};

// Maps to HTTP 409.
class ConflictError : public Error {
public:
    using Error::Error;
};

// Maps to HTTP 422. One entry per invalid field.
class ValidationError : public Error {
public:
    explicit ValidationError(std::vector<std::string> fields)
        : Error(join(fields)), fields_(std::move(fields)) {}
    const std::vector<std::string>& fields() const noexcept { return fields_; }

private:
    static std::string join(const std::vector<std::string>& fields) {
        std::string out = "invalid fields:";
        for (const auto& f : fields) out += " " + f;
        return out;
    }
    std::vector<std::string> fields_;
};

// External provider (segmenter, embedding service) could not be reached.
class ProviderUnavailable : public Error {
public:
    using Error::Error;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) throw ContractError(message);
}

}  // namespace chromalign
