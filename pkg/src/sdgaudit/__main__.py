import sys

from sdgaudit.cli import main

sys.exit(main())
