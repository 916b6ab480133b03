"""Allow ``python -m agv_cost_estimation``."""
from .harness import main

raise SystemExit(main())
