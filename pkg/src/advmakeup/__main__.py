import sys

from advmakeup.cli import main

sys.exit(main())
