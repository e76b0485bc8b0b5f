import sys

from kandos.cli import main

sys.exit(main())
