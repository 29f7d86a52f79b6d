import sys

from sparknet.cli import main

sys.exit(main())
