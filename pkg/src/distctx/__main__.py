import sys

from distctx.cli import main

sys.exit(main())
