#include "spcnn/errors.hpp"

#include <exception>

namespace spcnn {

namespace {

template <typename E>
[[noreturn]] void prefixed(const std::string& context, const E& e) {
    throw E(context + e.what());
}

}  // namespace

void rethrow_with_context(const std::string& context) {
    try {
        throw;
    } catch (const FormatError& e) {
        throw FormatError::prefixed(context, e);
    } catch (const DimensionError& e) {
        prefixed(context, e);
    } catch (const ParameterError& e) {
        prefixed(context, e);
    } catch (const IndexError& e) {
        prefixed(context, e);
    } catch (const DataError& e) {
        prefixed(context, e);
    } catch (const StatisticsError& e) {
        prefixed(context, e);
    } catch (const ConfigError& e) {
        prefixed(context, e);
    } catch (const DeterminismError& e) {
        prefixed(context, e);
    } catch (const Error& e) {
        prefixed(context, e);
    }
}

}  // namespace spcnn
