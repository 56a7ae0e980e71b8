"""
Run the desk-scale experiment suite.

Usage:
    python -m evals.run_evals
"""

import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from app.main import configure_logging
from evals.eval_framework import ExperimentEvaluator, create_default_test_suite


def main():
    """Run all experiments and print report."""

    configure_logging()
    print("Starting experiment evaluation...")
    print("=" * 60)

    evaluator = ExperimentEvaluator()

    test_cases = create_default_test_suite()
    for test_case in test_cases:
        evaluator.add_test_case(test_case)

    print(f"\n Loaded {len(test_cases)} test cases")
    print("\nRunning experiments...\n")

    summary = evaluator.run_all_tests()

    report = evaluator.generate_report(summary)
    print(report)

    # Exit with code based on pass/fail
    if summary["pass_rate"] == 1.0:
        print("\nEVAL SUITE PASSED")
        sys.exit(0)
    else:
        print("\nEVAL SUITE FAILED")
        sys.exit(1)


if __name__ == "__main__":
    main()
