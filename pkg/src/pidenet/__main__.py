from .ratelab import main

raise SystemExit(main())
