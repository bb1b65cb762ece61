from arrl.cli import main

raise SystemExit(main())
