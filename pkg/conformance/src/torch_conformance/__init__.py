from .runner import (
    ConformanceError,
    ConformanceReport,
    ProgramResult,
    check_program,
    execute_program,
    run_conformance,
    write_report,
)

__version__ = "0.1.0"
