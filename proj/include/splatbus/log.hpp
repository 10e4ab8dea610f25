#pragma once

namespace splatbus {

// Reads SPLATBUS_LOG (trace, debug, info, warn, err, critical, off).
void init_logging_from_env();

} // namespace splatbus
