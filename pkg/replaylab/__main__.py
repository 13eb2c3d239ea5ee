from replaylab.main import main

raise SystemExit(main())
